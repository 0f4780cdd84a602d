#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

#include "zipkit/calib.hpp"
#include "zipkit/zip_pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

using namespace zipkit;
using namespace zipkit::testutil;

TEST_CASE("identity Hessian reduces saliency to magnitude pruning") {
    Rng rng(3);
    Matrix w = random_matrix(rng, 5, 8);
    Matrix hinv = Matrix::Identity(8, 8);
    StructureGroup group = tiled_group(8, 2, GroupKind::generic);
    std::vector<double> scores = saliency_scores(w, hinv, group.structures);
    for (std::size_t i = 0; i < group.structures.size(); ++i) {
        double frob = 0;
        for (Index c : group.structures[i]) frob += w.col(c).squaredNorm();
        CHECK(scores[i] == doctest::Approx(frob).epsilon(1e-12));
    }
}

TEST_CASE("all-zero candidate columns score zero") {
    Rng rng(9);
    Matrix w = random_matrix(rng, 5, 8);
    w.col(2).setZero();
    w.col(3).setZero();
    Matrix hinv = hessian_inverse(random_matrix(rng, 8, 32), 1e-6);
    std::vector<double> scores = saliency_scores(w, hinv, {{2, 3}});
    CHECK(scores[0] == 0.0);
}

TEST_CASE("saliency equals the reduced least-squares error increase") {
    Rng rng(13);
    Matrix w = random_matrix(rng, 8, 16);
    Matrix x = random_matrix(rng, 16, 64);
    Matrix hinv = plain_hessian_inverse(x, 1e-10);
    StructureGroup group = tiled_group(16, 2, GroupKind::generic);
    std::vector<double> scores = saliency_scores(w, hinv, group.structures);
    for (std::size_t i = 0; i < group.structures.size(); ++i) {
        const double oracle = oracle_error_increase(w, x, {}, group.structures[i]);
        CHECK(std::abs(scores[i] - oracle) <= 1e-8 * std::max(std::abs(oracle), 1e-12));
    }
}

TEST_CASE("saliency is nonnegative for SPD inverses") {
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix w = random_matrix(rng, 6, 12);
        Matrix hinv = hessian_inverse(random_matrix(rng, 12, 20), 1e-8);
        StructureGroup group = tiled_group(12, 3, GroupKind::generic);
        for (double s : saliency_scores(w, hinv, group.structures)) CHECK(s >= -1e-10);
    }
}

TEST_CASE("prune_one leaves already-zero columns untouched") {
    Rng rng(21);
    Matrix w = random_matrix(rng, 5, 8);
    w.col(4).setZero();
    w.col(5).setZero();
    Matrix hinv = hessian_inverse(random_matrix(rng, 8, 32), 1e-8);
    auto [w2, h2] = prune_one(w, hinv, {4, 5});
    CHECK((w2 - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("prune_one with diagonal inverse only zeroes the pruned columns") {
    Rng rng(27);
    Matrix w = random_matrix(rng, 5, 8);
    Matrix hinv = 0.25 * Matrix::Identity(8, 8);
    auto [w2, h2] = prune_one(w, hinv, {1, 6});
    Matrix expect = w;
    expect.col(1).setZero();
    expect.col(6).setZero();
    CHECK((w2 - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("duplicate input feature is compensated exactly") {
    Rng rng(33);
    const Index d = 6, n = 40;
    Matrix x = random_matrix(rng, d, n);
    x.row(4) = x.row(1);  // feature 4 duplicates feature 1
    Matrix w = random_matrix(rng, 5, d);
    Matrix hinv = hessian_inverse(x, 1e-8);
    auto [w2, h2] = prune_one(w, hinv, {1});

    const double rel = (w2 * x - w * x).norm() / (w * x).norm();
    CHECK(rel <= 1e-6);
    // the twin column absorbs the pruned weight
    CHECK((w2.col(4) - (w.col(4) + w.col(1))).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(w2.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("run_ziplm with k = 0 changes nothing") {
    Rng rng(35);
    Matrix w = random_matrix(rng, 4, 8);
    Matrix hinv = hessian_inverse(random_matrix(rng, 8, 16), 1e-8);
    StructureGroup group = tiled_group(8, 2, GroupKind::generic);
    ZiplmResult r = run_ziplm(w, hinv, 0, group);
    CHECK((r.weights - w).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.mask.removed_structures.empty());
    CHECK(r.mask.pruned_column_count() == 0);
}

TEST_CASE("run_ziplm with k = all zeroes the layer, p = 1 exactly") {
    Rng rng(39);
    Matrix w = random_matrix(rng, 4, 8);
    Matrix x = random_matrix(rng, 8, 16);
    Matrix hinv = hessian_inverse(x, 1e-8);
    StructureGroup group = tiled_group(8, 2, GroupKind::generic);
    ZiplmResult r = run_ziplm(w, hinv, 4, group);
    CHECK(r.weights.cwiseAbs().maxCoeff() == 0.0);
    CHECK(measure_relative_error(r.weights, w, x) == 1.0);
}

TEST_CASE("k out of range rejected") {
    Rng rng(40);
    Matrix w = random_matrix(rng, 4, 8);
    Matrix hinv = Matrix::Identity(8, 8);
    StructureGroup group = tiled_group(8, 2, GroupKind::generic);
    CHECK_THROWS_AS(run_ziplm(w, hinv, 5, group), InputError);
    CHECK_THROWS_AS(run_ziplm(w, hinv, -1, group), InputError);
}

TEST_CASE("one-at-a-time removal beats joint removal of redundant twins") {
    Rng rng(43);
    const Index d = 6;
    Matrix x = random_matrix(rng, d, 40);
    x.row(1) = x.row(0);  // structures {0} and {1} are mutually redundant
    Matrix w = random_matrix(rng, 5, d);
    Matrix hinv = plain_hessian_inverse(x, 1e-10);
    StructureGroup group = tiled_group(d, 1, GroupKind::generic);

    // both twins look free before any removal
    std::vector<double> before = saliency_scores(w, hinv, {{0}, {1}});
    const double twin_before = std::min(before[0], before[1]);

    ZiplmResult r = run_ziplm(w, hinv, 2, group);
    REQUIRE(r.step_saliencies.size() == 2);
    // the first removal is one of the twins at near-zero cost
    CHECK(r.step_saliencies[0] <= twin_before + 1e-12);
    const int first = r.mask.removed_structures[0];
    CHECK((first == 0 || first == 1));

    // after the update, the surviving twin is no longer cheap
    const int twin = first == 0 ? 1 : 0;
    auto [w1, h1] = prune_one(w, hinv, {first});
    std::vector<double> after = saliency_scores(w1, h1, {{static_cast<Index>(twin)}});
    CHECK(after[0] > 100.0 * std::max(before[static_cast<std::size_t>(twin)], 1e-30));

    // naive joint removal (both updates computed from the initial state)
    auto [wa, ha] = prune_one(w, hinv, {0});
    auto [wb, hb] = prune_one(w, hinv, {1});
    Matrix naive = wa + wb - w;
    naive.col(0).setZero();
    naive.col(1).setZero();
    const double err_naive = (naive * x - w * x).norm();
    const double err_greedy = (r.weights * x - w * x).norm();
    CHECK(err_greedy < err_naive);
}

TEST_CASE("greedy step matches the oracle argmin at every step") {
    Rng rng(51);
    const Index d = 12;
    Matrix w = random_matrix(rng, 6, d);
    Matrix x = random_matrix(rng, d, 48);
    Matrix hinv = plain_hessian_inverse(x, 1e-10);
    StructureGroup group = tiled_group(d, 2, GroupKind::generic);

    Matrix cur_w = w;
    Matrix cur_h = hinv;
    std::vector<Index> removed_cols;
    std::vector<bool> removed(group.structures.size(), false);

    for (int step = 0; step < 4; ++step) {
        int best_impl = -1;
        double best_score = std::numeric_limits<double>::infinity();
        int best_oracle = -1;
        double best_delta = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < group.structures.size(); ++i) {
            if (removed[i]) continue;
            double score = saliency_scores(cur_w, cur_h, {group.structures[i]})[0];
            double delta = oracle_error_increase(w, x, removed_cols, group.structures[i]);
            CHECK(std::abs(score - delta) <= 1e-6 * std::max(std::abs(delta), 1e-10));
            if (score < best_score) {
                best_score = score;
                best_impl = static_cast<int>(i);
            }
            if (delta < best_delta) {
                best_delta = delta;
                best_oracle = static_cast<int>(i);
            }
        }
        REQUIRE(best_impl >= 0);
        CHECK(best_impl == best_oracle);
        prune_one_inplace(cur_w, cur_h, group.structures[static_cast<std::size_t>(best_impl)]);
        removed[static_cast<std::size_t>(best_impl)] = true;
        for (Index c : group.structures[static_cast<std::size_t>(best_impl)])
            removed_cols.push_back(c);
    }
}

TEST_CASE("downdated inverse tracks direct re-inversion over 20 random steps") {
    Rng rng(57);
    const Index d = 32;
    Matrix x = random_matrix(rng, d, 100);
    Matrix w = random_matrix(rng, 8, d);

    HessianState state(d);
    state.accumulate(x);
    state.finalize();
    const double lambda = state.effective_damping();
    Matrix damped = state.gram();
    damped.diagonal().array() += lambda;
    Matrix hinv = state.inverse();

    std::vector<Index> alive(d);
    std::iota(alive.begin(), alive.end(), 0);

    for (int step = 0; step < 20; ++step) {
        const std::size_t pick = static_cast<std::size_t>(rng.below(alive.size()));
        const Index col = alive[pick];
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pick));
        prune_one_inplace(w, hinv, {col});

        Matrix sub(static_cast<Index>(alive.size()), static_cast<Index>(alive.size()));
        Matrix maintained(sub.rows(), sub.cols());
        for (std::size_t i = 0; i < alive.size(); ++i) {
            for (std::size_t j = 0; j < alive.size(); ++j) {
                sub(static_cast<Index>(i), static_cast<Index>(j)) = damped(alive[i], alive[j]);
                maintained(static_cast<Index>(i), static_cast<Index>(j)) = hinv(alive[i], alive[j]);
            }
        }
        Matrix direct = sub.llt().solve(Matrix::Identity(sub.rows(), sub.cols()));
        CHECK((maintained - direct).norm() <= 1e-6 * direct.norm());
    }
}

TEST_CASE("measure_relative_error boundary values") {
    Rng rng(61);
    Matrix w = random_matrix(rng, 4, 6);
    Matrix x = random_matrix(rng, 6, 20);
    CHECK(measure_relative_error(w, w, x) == 0.0);
    CHECK(measure_relative_error(Matrix::Zero(4, 6), w, x) == 1.0);
    CHECK(measure_relative_error(0.5 * w, w, x) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(measure_relative_error(w, Matrix::Zero(4, 6), x), InputError);
}

TEST_CASE("ffn kept-width grid follows the 0.9^i schedule") {
    std::vector<Index> widths = ffn_kept_widths(3072);
    REQUIRE(widths.size() == 44);  // 43 distinct ratios plus the full drop
    CHECK(widths[0] == 3072);
    CHECK(widths[1] == 2765);
    CHECK(widths[2] == 2488);
    CHECK(widths.back() == 0);
    CHECK(std::is_sorted(widths.rbegin(), widths.rend()));

    // tiny layers collapse duplicate ratios
    std::vector<Index> small = ffn_kept_widths(8);
    CHECK(std::adjacent_find(small.begin(), small.end()) == small.end());
    CHECK(small.front() == 8);
    CHECK(small.back() == 0);
}

TEST_CASE("database grids and boundary variants") {
    Rng rng(67);

    SUBCASE("heads grid for N = 12 has 13 variants") {
        const Index width = 8, heads = 12, d = width * heads;
        Matrix w = random_matrix(rng, 8, d);
        Matrix x = random_matrix(rng, d, 2 * d);
        Matrix hinv = hessian_inverse(x, 1e-8);
        StructureGroup group = tiled_group(d, width, GroupKind::attention_heads);
        LayerDatabase db = build_database("attn", w, hinv, x, group);
        CHECK(db.level_count(GroupKind::attention_heads) == 13);
        CHECK(db.variant(GroupKind::attention_heads, 0).relative_error == 0.0);
        CHECK(db.variant(GroupKind::attention_heads, 12).relative_error == 1.0);
        CHECK(db.variant(GroupKind::attention_heads, 12).kept_structures == 0);
    }

    SUBCASE("ffn database p-values and cumulative saliency") {
        const Index d = 24;
        Matrix w = random_matrix(rng, 10, d);
        Matrix x = random_matrix(rng, d, 64);
        Matrix hinv = hessian_inverse(x, 1e-8);
        StructureGroup group = tiled_group(d, 1, GroupKind::ffn_columns);
        LayerDatabase db = build_database("ffn", w, hinv, x, group);

        const int levels = db.level_count(GroupKind::ffn_columns);
        CHECK(levels == static_cast<int>(ffn_kept_widths(d).size()));
        double prev = -1;
        for (int lv = 0; lv < levels; ++lv) {
            const PrunedVariant& v = db.variant(GroupKind::ffn_columns, lv);
            CHECK(v.cumulative_saliency >= prev - 1e-10);
            prev = v.cumulative_saliency;
            // masked columns exactly zero
            for (Index c = 0; c < d; ++c)
                if (v.mask.column_mask[static_cast<std::size_t>(c)])
                    CHECK(v.weights.col(c).cwiseAbs().maxCoeff() == 0.0);
        }
        CHECK(db.variant(GroupKind::ffn_columns, 0).relative_error == 0.0);
        CHECK(db.variant(GroupKind::ffn_columns, levels - 1).relative_error == 1.0);
    }
}

TEST_CASE("database round-trips through its container") {
    Rng rng(71);
    const Index d = 12;
    Matrix w = random_matrix(rng, 6, d).cast<float>().cast<double>();
    Matrix x = random_matrix(rng, d, 32).cast<float>().cast<double>();
    Matrix hinv = hessian_inverse(x, 1e-8);
    StructureGroup group = tiled_group(d, 2, GroupKind::attention_heads);
    LayerDatabase db = build_database("blk", w, hinv, x, group);

    TempDir dir("dbrt");
    save_database(db, dir.path());
    LayerDatabase loaded = load_database(dir.path());
    CHECK(loaded.layer == db.layer);
    CHECK(loaded.variants.size() == db.variants.size());
    for (const auto& [key, v] : db.variants) {
        const PrunedVariant& lv = loaded.variant(key.first, key.second);
        CHECK(lv.relative_error == v.relative_error);
        CHECK(lv.kept_structures == v.kept_structures);
        CHECK(lv.mask.removed_structures == v.mask.removed_structures);
        CHECK((lv.weights.cast<float>() - v.weights.cast<float>()).norm() == 0.0f);
    }
}

TEST_CASE("compact deletes masked columns and linked producer rows") {
    Rng rng(77);

    SUBCASE("nothing pruned: compact is the identity") {
        const Index d = 8, hidden = 5;
        Matrix w = random_matrix(rng, hidden, d);
        Matrix producer = random_matrix(rng, d, hidden);
        StructureGroup group = tiled_group(d, 2, GroupKind::ffn_columns);
        LinkedProducer link;
        link.matrix = "p";
        for (Index c = 0; c < d; ++c) link.rows.push_back(c);
        group.linked_producer = link;

        PrunedVariant v;
        v.weights = w;
        v.mask.column_mask.assign(static_cast<std::size_t>(d), false);
        CompactResult res = compact(v, group, producer);
        CHECK((res.target - w).cwiseAbs().maxCoeff() == 0.0);
        CHECK((*res.producer - producer).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("2 of 12 heads at width 64 lose 128 columns and rows") {
        const Index width = 64, heads = 12, d = width * heads, hidden = 16;
        Matrix w = Matrix::Zero(hidden, d);
        Matrix producer = Matrix::Zero(d, hidden);
        StructureGroup group = tiled_group(d, width, GroupKind::attention_heads);
        LinkedProducer link;
        link.matrix = "p";
        for (Index c = 0; c < d; ++c) link.rows.push_back(c);
        group.linked_producer = link;

        PrunedVariant v;
        v.weights = w;
        v.mask.column_mask.assign(static_cast<std::size_t>(d), false);
        v.mask.removed_structures = {3, 7};
        for (int s : v.mask.removed_structures)
            for (Index c : group.structures[static_cast<std::size_t>(s)])
                v.mask.column_mask[static_cast<std::size_t>(c)] = true;
        CompactResult res = compact(v, group, producer);
        CHECK(res.target.cols() == d - 128);
        CHECK(res.producer->rows() == d - 128);
    }

    SUBCASE("compacted pipeline matches the masked pipeline on random inputs") {
        const Index d = 16, hidden = 6;
        Matrix x = random_matrix(rng, d, 48);
        Matrix w = random_matrix(rng, hidden, d);
        Matrix producer = random_matrix(rng, d, hidden);
        Matrix hinv = hessian_inverse(x, 1e-8);
        StructureGroup group = tiled_group(d, 2, GroupKind::attention_heads);
        LinkedProducer link;
        link.matrix = "p";
        for (Index c = 0; c < d; ++c) link.rows.push_back(c);
        group.linked_producer = link;

        LayerDatabase db = build_database("blk", w, hinv, x, group);
        const PrunedVariant& v = db.variant(GroupKind::attention_heads, 3);  // 5 of 8 kept
        CompactResult res = compact(v, group, producer);

        Matrix inputs = random_matrix(rng, hidden, 64);
        Matrix masked_out = v.weights * (producer * inputs).cwiseMax(0.0);
        Matrix compact_out = res.target * (*res.producer * inputs).cwiseMax(0.0);
        CHECK((masked_out - compact_out).cwiseAbs().maxCoeff() <= 1e-5);
    }

    SUBCASE("missing linked producer is an error") {
        StructureGroup group = tiled_group(8, 2, GroupKind::attention_heads);
        PrunedVariant v;
        v.weights = Matrix::Zero(4, 8);
        v.mask.column_mask.assign(8, false);
        CHECK_THROWS_AS(compact(v, group, Matrix::Zero(8, 4)), InputError);
    }
}
