#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chain_fixture.hpp"
#include "test_util.hpp"

#include "zipkit/latency.hpp"
#include "zipkit/zip_pruner.hpp"

#include <fstream>

using namespace zipkit;
using namespace zipkit::testutil;

namespace {

// the published single-block reference table: intermediate sizes and head
// counts against milliseconds
const char* kReferenceTable = R"({
  "device": "v100",
  "dense_runtime_ms": 19.8,
  "kinds": {
    "ffn_columns": [
      {"key": 3072, "ms": 11.9}, {"key": 1814, "ms": 7.4}, {"key": 1322, "ms": 5.8},
      {"key": 302, "ms": 1.6}, {"key": 130, "ms": 1.0}, {"key": 76, "ms": 0.9},
      {"key": 33, "ms": 0.7}
    ],
    "attention_heads": [
      {"key": 12, "ms": 7.9}, {"key": 10, "ms": 6.7}, {"key": 8, "ms": 5.8},
      {"key": 6, "ms": 4.4}, {"key": 4, "ms": 3.2}, {"key": 2, "ms": 1.9},
      {"key": 0, "ms": 0}
    ]
  }
})";

LatencyTable reference_table(const TempDir& dir) {
    const auto path = dir.path() / "table.json";
    std::ofstream out(path);
    out << kReferenceTable;
    out.close();
    return load_table(path);
}

}  // namespace

TEST_CASE("reference table loads with its transcribed entries") {
    TempDir dir("lat_ref");
    LatencyTable t = reference_table(dir);
    CHECK(t.kinds.at(GroupKind::attention_heads).size() == 7);
    // the transcription has 7 ffn rows; the zero-cost all-pruned row is implicit
    CHECK(t.kinds.at(GroupKind::ffn_columns).size() == 8);
    CHECK(t.lookup_ns(GroupKind::ffn_columns, 0) == 0);
    CHECK(t.dense_runtime_ns == ms_to_ns(19.8));
}

TEST_CASE("dense single-layer estimate reproduces the reference sum") {
    TempDir dir("lat_sum");
    LatencyTable t = reference_table(dir);
    std::vector<LayerGroupChoice> config{{"l0", GroupKind::attention_heads, 12},
                                         {"l0", GroupKind::ffn_columns, 3072}};
    CHECK(estimate_runtime_ns(config, t) == ms_to_ns(19.8));
    CHECK(ns_to_ms(estimate_runtime_ns(config, t)) == doctest::Approx(19.8).epsilon(1e-12));

    SUBCASE("intermediate 302 plus 6 heads") {
        std::vector<LayerGroupChoice> cfg{{"l0", GroupKind::attention_heads, 6},
                                          {"l0", GroupKind::ffn_columns, 302}};
        CHECK(estimate_runtime_ns(cfg, t) == ms_to_ns(6.0));
    }
    SUBCASE("everything pruned runs in zero time") {
        std::vector<LayerGroupChoice> cfg{{"l0", GroupKind::attention_heads, 0},
                                          {"l0", GroupKind::ffn_columns, 0}};
        CHECK(estimate_runtime_ns(cfg, t) == 0);
    }
}

TEST_CASE("speedup estimation") {
    TempDir dir("lat_speed");
    LatencyTable t = reference_table(dir);

    SUBCASE("dense config is 1.0x") {
        std::vector<LayerGroupChoice> cfg{{"l0", GroupKind::attention_heads, 12},
                                          {"l0", GroupKind::ffn_columns, 3072}};
        SpeedupEstimate est = estimate_speedup(cfg, t);
        CHECK(est.speedup == 1.0);
        CHECK_FALSE(est.infinite);
    }
    SUBCASE("halving every layer's runtime is 2.0x") {
        LatencyTable half = t;
        half.kinds[GroupKind::attention_heads] = {{12, 3.95, 0}, {0, 0.0, 0}};
        half.kinds[GroupKind::ffn_columns] = {{3072, 5.95, 0}, {0, 0.0, 0}};
        half.validate_and_normalize();
        std::vector<LayerGroupChoice> cfg{{"l0", GroupKind::attention_heads, 12},
                                          {"l0", GroupKind::ffn_columns, 3072}};
        SpeedupEstimate est = estimate_speedup(cfg, half);
        CHECK(est.speedup == 2.0);
    }
    SUBCASE("zero-runtime config is flagged infinite") {
        std::vector<LayerGroupChoice> cfg{{"l0", GroupKind::attention_heads, 0},
                                          {"l0", GroupKind::ffn_columns, 0}};
        SpeedupEstimate est = estimate_speedup(cfg, t);
        CHECK(est.infinite);
        CHECK(std::isinf(est.speedup));
    }
    SUBCASE("published V100 MLP width ratios") {
        // per-op speedups for shrinking one MLP: 302 vs 3072 is 6.9x
        LatencyTable mlp;
        mlp.device = "v100";
        mlp.dense_runtime_ms = 11.9;
        const std::vector<std::pair<std::int64_t, double>> ratios{
            {3072, 1.0}, {1814, 1.6}, {1322, 2.0}, {302, 6.9}, {130, 11.8}, {76, 13.1}, {33, 14.8}};
        for (auto [key, ratio] : ratios)
            mlp.kinds[GroupKind::ffn_columns].push_back(LatencyEntry{key, 11.9 / ratio, 0});
        mlp.validate_and_normalize();
        std::vector<LayerGroupChoice> cfg{{"mlp", GroupKind::ffn_columns, 302}};
        CHECK(estimate_speedup(cfg, mlp).speedup == doctest::Approx(6.9).epsilon(1e-6));
    }
}

TEST_CASE("runtime estimates are exactly additive over disjoint layer sets") {
    TempDir dir("lat_add");
    LatencyTable t = reference_table(dir);
    Rng rng(101);
    const std::vector<std::int64_t> head_keys{0, 2, 4, 6, 8, 10, 12};
    const std::vector<std::int64_t> ffn_keys{0, 33, 76, 130, 302, 1322, 1814, 3072};

    for (int trial = 0; trial < 50; ++trial) {
        std::vector<LayerGroupChoice> all;
        for (int layer = 0; layer < 8; ++layer) {
            all.push_back({"l" + std::to_string(layer), GroupKind::attention_heads,
                           head_keys[rng.below(head_keys.size())]});
            all.push_back({"l" + std::to_string(layer), GroupKind::ffn_columns,
                           ffn_keys[rng.below(ffn_keys.size())]});
        }
        std::vector<LayerGroupChoice> a, b;
        for (const auto& c : all) (rng.uniform01() < 0.5 ? a : b).push_back(c);
        CHECK(estimate_runtime_ns(a, t) + estimate_runtime_ns(b, t) ==
              estimate_runtime_ns(all, t));
    }
}

TEST_CASE("interpolation fills missing grid levels; extrapolation is forbidden") {
    TempDir dir("lat_interp");
    LatencyTable t = reference_table(dir);

    // linear between (1322, 5.8) and (302, 1.6)
    const std::int64_t mid = t.lookup_ns(GroupKind::ffn_columns, 812);
    CHECK(mid == ms_to_ns(0.5 * (5.8 + 1.6)));
    // between the implicit zero row and (33, 0.7)
    CHECK(t.lookup_ns(GroupKind::ffn_columns, 11) ==
          std::llround(11.0 / 33.0 * static_cast<double>(ms_to_ns(0.7))));

    CHECK_THROWS_AS(t.lookup_ns(GroupKind::ffn_columns, 4000), TableError);
    CHECK_THROWS_AS(t.lookup_ns(GroupKind::ffn_columns, 812, /*interpolate=*/false), TableError);
    CHECK_THROWS_AS(t.lookup_ns(GroupKind::generic, 1), TableError);
}

TEST_CASE("table validation rejects malformed files") {
    TempDir dir("lat_bad");

    SUBCASE("negative latency") {
        std::ofstream out(dir.path() / "bad.json");
        out << R"({"device":"x","dense_runtime_ms":1.0,
                   "kinds":{"ffn_columns":[{"key":8,"ms":-1.0}]}})";
        out.close();
        CHECK_THROWS_AS(load_table(dir.path() / "bad.json"), TableError);
    }
    SUBCASE("missing dense_runtime") {
        std::ofstream out(dir.path() / "bad.json");
        out << R"({"device":"x","kinds":{"ffn_columns":[{"key":8,"ms":1.0}]}})";
        out.close();
        CHECK_THROWS_AS(load_table(dir.path() / "bad.json"), TableError);
    }
    SUBCASE("nonzero all-pruned entry") {
        std::ofstream out(dir.path() / "bad.json");
        out << R"({"device":"x","dense_runtime_ms":1.0,
                   "kinds":{"ffn_columns":[{"key":0,"ms":0.5},{"key":8,"ms":1.0}]}})";
        out.close();
        CHECK_THROWS_AS(load_table(dir.path() / "bad.json"), TableError);
    }
}

TEST_CASE("table round-trips bit-identically") {
    TempDir dir("lat_rt");
    LatencyTable t = reference_table(dir);
    save_table(t, dir.path() / "copy.json");
    LatencyTable t2 = load_table(dir.path() / "copy.json");
    CHECK(t2.dense_runtime_ms == t.dense_runtime_ms);
    for (const auto& [kind, entries] : t.kinds) {
        const auto& other = t2.kinds.at(kind);
        REQUIRE(other.size() == entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            CHECK(other[i].key == entries[i].key);
            CHECK(other[i].ms == entries[i].ms);
            CHECK(other[i].ns == entries[i].ns);
        }
    }
}

TEST_CASE("bench kernel basics") {
    SUBCASE("zero width costs nothing") {
        CHECK(bench_kernel(0, 16, 16) == 0.0);
        CHECK(bench_kernel(16, 0, 16) == 0.0);
    }
    SUBCASE("reps below 3 rejected") { CHECK_THROWS_AS(bench_kernel(4, 4, 4, 2, 1), InputError); }
    SUBCASE("repeated medians agree within the flaky-tolerant bound") {
        const double a = bench_kernel(96, 96, 64, 15, 5);
        const double b = bench_kernel(96, 96, 64, 15, 5);
        CHECK(a > 0.0);
        CHECK(b > 0.0);
        CHECK(std::abs(a - b) <= 0.25 * std::max(a, b));
    }
}

TEST_CASE("generated table covers every grid level of the model") {
    ChainFixture fx = make_chain_fixture(
        12, {{GroupKind::ffn_columns, 1, 32}, {GroupKind::attention_heads, 4, 6}}, 8, 5);
    BenchOptions opts;
    opts.batch = 16;
    opts.reps = 3;
    opts.warmup = 1;
    LatencyTable t = build_table_for_model(fx.model, opts);

    CHECK(t.kinds.at(GroupKind::ffn_columns).size() == ffn_kept_widths(32).size());
    CHECK(t.kinds.at(GroupKind::attention_heads).size() == 7);  // 6 heads .. 0
    CHECK(t.lookup_ns(GroupKind::ffn_columns, 0) == 0);
    // dense runtime equals the sum of the two dense entries
    std::vector<LayerGroupChoice> dense{{"block0", GroupKind::ffn_columns, 32},
                                        {"block1", GroupKind::attention_heads, 6}};
    CHECK(estimate_runtime_ns(dense, t) == t.dense_runtime_ns);
}
