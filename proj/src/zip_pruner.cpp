/*
 * Copyright (c) 2026 The zipkit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "zipkit/zip_pruner.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace zipkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Matrix submatrix(const Matrix& m, const std::vector<Index>& rows, const std::vector<Index>& cols) {
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
    return out;
}

Matrix columns(const Matrix& m, const std::vector<Index>& cols) {
    Matrix out(m.rows(), static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
    return out;
}

/// Factorization of the candidate sub-block (H⁻¹)_{S,S}; shared between the
/// row sum of the saliency and the compensation update.
struct SubBlockSolve {
    Eigen::LLT<Matrix> llt;
    bool ok = false;
};

SubBlockSolve factor_subblock(const Matrix& hinv, const std::vector<Index>& cols) {
    SubBlockSolve s;
    Matrix block = submatrix(hinv, cols, cols);
    s.llt.compute(block);
    s.ok = s.llt.info() == Eigen::Success;
    return s;
}

}  // namespace

Index PruneMask::pruned_column_count() const {
    return static_cast<Index>(std::count(column_mask.begin(), column_mask.end(), true));
}

const PrunedVariant& LayerDatabase::variant(GroupKind kind, int level) const {
    auto it = variants.find({kind, level});
    if (it == variants.end())
        throw InputError("database for layer '" + layer + "' has no variant (" +
                         to_string(kind) + ", level " + std::to_string(level) + ")");
    return it->second;
}

int LayerDatabase::level_count(GroupKind kind) const {
    int n = 0;
    for (const auto& [key, v] : variants)
        if (key.first == kind) ++n;
    return n;
}

std::vector<double> saliency_scores(const Matrix& weights, const Matrix& hinv,
                                    const std::vector<std::vector<Index>>& candidates) {
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const std::vector<Index>& cols = candidates[c];
        if (cols.size() == 1) {
            const Index j = cols[0];
            const double d = hinv(j, j);
            if (!(d > 0))
                throw NumericalError("singular saliency sub-block for candidate " +
                                     std::to_string(c) + " (column " + std::to_string(j) + ")");
            scores.push_back(weights.col(j).squaredNorm() / d);
            continue;
        }
        SubBlockSolve sub = factor_subblock(hinv, cols);
        if (!sub.ok)
            throw NumericalError("singular saliency sub-block for candidate " +
                                 std::to_string(c));
        // score = Σ_i w_i B w_iᵀ = <W_S, W_S B> with B the sub-block inverse,
        // factored once and reused across all rows
        Matrix w_s = columns(weights, cols);                       // d_row x s
        Matrix solved = sub.llt.solve(w_s.transpose());            // s x d_row
        scores.push_back((w_s.transpose().array() * solved.array()).sum());
    }
    return scores;
}

void prune_one_inplace(Matrix& weights, Matrix& hinv, const std::vector<Index>& cols) {
    const Index s = static_cast<Index>(cols.size());
    if (s == 0) return;

    Matrix w_s = columns(weights, cols);    // d_row x s
    Matrix hinv_s = columns(hinv, cols);    // d_col x s  (symmetric: also the S rows)

    SubBlockSolve sub = factor_subblock(hinv, cols);
    if (!sub.ok) throw NumericalError("singular sub-block in prune step");

    // δ_S = -W_S · B · (H⁻¹)_{S,:}   with B = ((H⁻¹)_{S,S})⁻¹
    Matrix rows_solved = sub.llt.solve(hinv_s.transpose());  // s x d_col
    weights.noalias() -= w_s * rows_solved;

    // H⁻¹ <- H⁻¹ - (H⁻¹)_{:,S} · B · (H⁻¹)_{S,:}
    hinv.noalias() -= hinv_s * rows_solved;

    // pruned rows/cols are dead from here on; zero them so stale values can
    // never leak into later sub-blocks
    for (Index c : cols) {
        weights.col(c).setZero();
        hinv.col(c).setZero();
        hinv.row(c).setZero();
    }
}

std::pair<Matrix, Matrix> prune_one(const Matrix& weights, const Matrix& hinv,
                                    const std::vector<Index>& cols) {
    Matrix w = weights;
    Matrix h = hinv;
    prune_one_inplace(w, h, cols);
    return {std::move(w), std::move(h)};
}

double measure_relative_error(const Matrix& w_hat, const Matrix& w, const Matrix& x) {
    if (w_hat.rows() != w.rows() || w_hat.cols() != w.cols())
        throw InputError("measure_relative_error: weight shapes differ");
    if (w.cols() != x.rows()) throw InputError("measure_relative_error: X rows != weight cols");
    const double denom = (w * x).norm();
    if (denom == 0.0)
        throw InputError("measure_relative_error: reference output is zero, ratio undefined");
    return ((w_hat - w) * x).norm() / denom;
}

namespace {

struct RemovalLoop {
    Matrix weights;
    Matrix hinv;
    const StructureGroup& group;
    std::vector<bool> removed;            // per structure
    std::vector<int> removal_order;
    std::vector<double> step_saliencies;
    std::vector<bool> column_mask;

    RemovalLoop(const Matrix& w, const Matrix& h, const StructureGroup& g)
        : weights(w), hinv(h), group(g), removed(g.structures.size(), false),
          column_mask(static_cast<std::size_t>(w.cols()), false) {
        if (hinv.rows() != weights.cols() || hinv.cols() != weights.cols())
            throw InputError("inverse Hessian shape does not match weight columns");
    }

    /// Greedy argmin over remaining structures; lowest index wins ties.
    void step() {
        std::vector<std::vector<Index>> remaining;
        std::vector<int> indices;
        for (std::size_t i = 0; i < group.structures.size(); ++i) {
            if (removed[i]) continue;
            remaining.push_back(group.structures[i]);
            indices.push_back(static_cast<int>(i));
        }
        if (remaining.empty()) throw InputError("no structures left to remove");
        const std::vector<double> scores = saliency_scores(weights, hinv, remaining);
        std::size_t best = 0;
        for (std::size_t i = 1; i < scores.size(); ++i)
            if (scores[i] < scores[best]) best = i;
        if (scores[best] < -1e-10)
            throw NumericalError("negative saliency (" + std::to_string(scores[best]) +
                                 "): inverse Hessian no longer positive definite");
        const int chosen = indices[best];
        prune_one_inplace(weights, hinv, group.structures[static_cast<std::size_t>(chosen)]);
        removed[static_cast<std::size_t>(chosen)] = true;
        removal_order.push_back(chosen);
        step_saliencies.push_back(scores[best]);
        for (Index c : group.structures[static_cast<std::size_t>(chosen)])
            column_mask[static_cast<std::size_t>(c)] = true;
    }

    Matrix masked_weights() const {
        Matrix w = weights;
        for (std::size_t c = 0; c < column_mask.size(); ++c)
            if (column_mask[c]) w.col(static_cast<Index>(c)).setZero();
        return w;
    }

    PruneMask mask() const { return PruneMask{removal_order, column_mask}; }
};

}  // namespace

ZiplmResult run_ziplm(const Matrix& weights, const Matrix& hinv, Index k,
                      const StructureGroup& group) {
    const Index n = static_cast<Index>(group.structures.size());
    if (k < 0 || k > n)
        throw InputError("structures to remove (" + std::to_string(k) + ") out of range [0, " +
                         std::to_string(n) + "]");
    RemovalLoop loop(weights, hinv, group);
    for (Index i = 0; i < k; ++i) loop.step();
    return ZiplmResult{loop.masked_weights(), loop.mask(), loop.step_saliencies};
}

std::vector<Index> ffn_kept_widths(Index d_int) {
    std::vector<Index> widths;
    for (int i = 0; i <= 42; ++i) {
        const double w = static_cast<double>(d_int) * std::pow(0.9, i);
        const Index rounded = static_cast<Index>(std::llround(w));  // half away from zero
        if (widths.empty() || widths.back() != rounded) widths.push_back(rounded);
    }
    if (widths.empty() || widths.back() != 0) widths.push_back(0);
    return widths;
}

std::vector<Index> grid_kept_structures(const StructureGroup& group) {
    const Index n = static_cast<Index>(group.structures.size());
    std::vector<Index> kept;
    if (group.kind == GroupKind::attention_heads) {
        for (Index h = n; h >= 0; --h) kept.push_back(h);
    } else {
        for (Index w : ffn_kept_widths(n * group.structure_width)) {
            // widths on the 0.9^i grid may not divide the structure width;
            // round to whole structures and deduplicate again
            const Index s = static_cast<Index>(
                std::llround(static_cast<double>(w) / static_cast<double>(group.structure_width)));
            if (kept.empty() || kept.back() != s) kept.push_back(s);
        }
        if (kept.front() != n) kept.insert(kept.begin(), n);
    }
    return kept;
}

LayerDatabase build_database(const std::string& layer_name, const Matrix& weights,
                             const Matrix& hinv, const Matrix& x, const StructureGroup& group) {
    LayerDatabase db;
    db.layer = layer_name;
    db.grid_kept = grid_kept_structures(group);

    const Index n = static_cast<Index>(group.structures.size());
    RemovalLoop loop(weights, hinv, group);

    double cumulative = 0.0;
    std::size_t next_level = 0;

    for (Index removed = 0; removed <= n; ++removed) {
        const Index kept = n - removed;
        if (next_level < db.grid_kept.size() && db.grid_kept[next_level] == kept) {
            PrunedVariant v;
            v.kind = group.kind;
            v.level_index = static_cast<int>(next_level);
            v.kept_structures = kept;
            v.weights = loop.masked_weights();
            v.mask = loop.mask();
            v.relative_error = measure_relative_error(v.weights, weights, x);
            v.cumulative_saliency = cumulative;
            db.variants.emplace(std::make_pair(group.kind, v.level_index), std::move(v));
            ++next_level;
        }
        if (removed == n) break;
        loop.step();
        cumulative += loop.step_saliencies.back();
    }
    return db;
}

CompactResult compact(const PrunedVariant& variant, const StructureGroup& group,
                      const Matrix& producer) {
    if (!group.linked_producer)
        throw InputError("compact: group of kind '" + std::string(to_string(group.kind)) +
                         "' has no linked producer");
    const LinkedProducer& link = *group.linked_producer;
    const Matrix& w = variant.weights;
    if (static_cast<Index>(variant.mask.column_mask.size()) != w.cols())
        throw InputError("compact: mask length does not match weight columns");

    CompactResult out;
    for (Index c = 0; c < w.cols(); ++c)
        if (!variant.mask.column_mask[static_cast<std::size_t>(c)]) out.kept_columns.push_back(c);

    out.target.resize(w.rows(), static_cast<Index>(out.kept_columns.size()));
    for (std::size_t j = 0; j < out.kept_columns.size(); ++j)
        out.target.col(static_cast<Index>(j)) = w.col(out.kept_columns[j]);

    std::vector<bool> row_kept(static_cast<std::size_t>(producer.rows()), true);
    for (Index c = 0; c < w.cols(); ++c) {
        if (!variant.mask.column_mask[static_cast<std::size_t>(c)]) continue;
        const Index r = link.rows[static_cast<std::size_t>(c)];
        if (r < 0 || r >= producer.rows())
            throw InputError("compact: linked producer row out of range");
        row_kept[static_cast<std::size_t>(r)] = false;
    }
    for (Index r = 0; r < producer.rows(); ++r)
        if (row_kept[static_cast<std::size_t>(r)]) out.kept_producer_rows.push_back(r);

    Matrix shrunk(static_cast<Index>(out.kept_producer_rows.size()), producer.cols());
    for (std::size_t i = 0; i < out.kept_producer_rows.size(); ++i)
        shrunk.row(static_cast<Index>(i)) = producer.row(out.kept_producer_rows[i]);
    out.producer = std::move(shrunk);
    return out;
}

void save_database(const LayerDatabase& db, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    json index;
    index["layer"] = db.layer;
    index["grid_kept"] = db.grid_kept;
    index["variants"] = json::array();
    for (const auto& [key, v] : db.variants) {
        const std::string blob =
            std::string(to_string(key.first)) + ".level" + std::to_string(key.second) + ".bin";
        write_blob_f32(dir / blob, v.weights);
        json jv;
        jv["kind"] = to_string(key.first);
        jv["level_index"] = key.second;
        jv["kept_structures"] = v.kept_structures;
        jv["relative_error"] = v.relative_error;
        jv["cumulative_saliency"] = v.cumulative_saliency;
        jv["removed_structures"] = v.mask.removed_structures;
        jv["pruned_columns"] = [&] {
            std::vector<Index> cols;
            for (std::size_t c = 0; c < v.mask.column_mask.size(); ++c)
                if (v.mask.column_mask[c]) cols.push_back(static_cast<Index>(c));
            return cols;
        }();
        jv["rows"] = v.weights.rows();
        jv["cols"] = v.weights.cols();
        jv["blob"] = blob;
        index["variants"].push_back(std::move(jv));
    }
    std::ofstream out(dir / "index.json", std::ios::trunc);
    if (!out) throw InputError("unwritable destination: " + (dir / "index.json").string());
    out << index.dump(2) << "\n";
}

LayerDatabase load_database(const fs::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw InputError("cannot open database index: " + (dir / "index.json").string());
    json index;
    try {
        in >> index;
    } catch (const json::exception& e) {
        throw InputError("database index parse error: " + std::string(e.what()));
    }
    LayerDatabase db;
    db.layer = index.at("layer").get<std::string>();
    db.grid_kept = index.at("grid_kept").get<std::vector<Index>>();
    for (const json& jv : index.at("variants")) {
        PrunedVariant v;
        v.kind = group_kind_from_string(jv.at("kind").get<std::string>());
        v.level_index = jv.at("level_index").get<int>();
        v.kept_structures = jv.at("kept_structures").get<Index>();
        v.relative_error = jv.at("relative_error").get<double>();
        v.cumulative_saliency = jv.at("cumulative_saliency").get<double>();
        v.mask.removed_structures = jv.at("removed_structures").get<std::vector<int>>();
        const Index rows = jv.at("rows").get<Index>();
        const Index cols = jv.at("cols").get<Index>();
        v.weights = read_blob_f32(dir / jv.at("blob").get<std::string>(), rows, cols);
        v.mask.column_mask.assign(static_cast<std::size_t>(cols), false);
        for (Index c : jv.at("pruned_columns").get<std::vector<Index>>())
            v.mask.column_mask[static_cast<std::size_t>(c)] = true;
        db.variants.emplace(std::make_pair(v.kind, v.level_index), std::move(v));
    }
    return db;
}

}  // namespace zipkit
