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
#ifndef ZIPKIT_ZIP_PRUNER_HPP
#define ZIPKIT_ZIP_PRUNER_HPP

#include "zipkit/model_store.hpp"
#include "zipkit/types.hpp"

#include <filesystem>
#include <map>
#include <utility>
#include <vector>

namespace zipkit {

/// Cumulative record of removed structures and their column masks.
struct PruneMask {
    std::vector<int> removed_structures;  // structure indices, removal order
    std::vector<bool> column_mask;        // true = pruned, per target column

    Index pruned_column_count() const;
};

struct PrunedVariant {
    GroupKind kind = GroupKind::generic;
    int level_index = 0;
    Index kept_structures = 0;
    Matrix weights;             // masked columns exactly zero
    PruneMask mask;
    double relative_error = 0;  // p_s, measured on calibration data
    double cumulative_saliency = 0;
};

/// Per-layer grid of pruned variants, keyed by (group kind, level index).
struct LayerDatabase {
    std::string layer;
    std::map<std::pair<GroupKind, int>, PrunedVariant> variants;
    std::vector<Index> grid_kept;  // kept-structure counts, level order

    const PrunedVariant& variant(GroupKind kind, int level) const;
    int level_count(GroupKind kind) const;
};

/// Joint-row structured saliency (one score per candidate column set):
///   score(S) = Σ_i W_{i,S} · ((H⁻¹)_{S,S})⁻¹ · Wᵀ_{i,S}
/// The sub-inverse is factored once per candidate and reused across rows.
std::vector<double> saliency_scores(const Matrix& weights, const Matrix& hinv,
                                    const std::vector<std::vector<Index>>& candidates);

/// One removal step: applies the optimal compensation update to the weights
/// and downdates the inverse Hessian in place. Rows/columns of `hinv` at the
/// removed indices are zeroed; they must not be referenced again.
void prune_one_inplace(Matrix& weights, Matrix& hinv, const std::vector<Index>& cols);

/// Value-semantics wrapper around prune_one_inplace.
std::pair<Matrix, Matrix> prune_one(const Matrix& weights, const Matrix& hinv,
                                    const std::vector<Index>& cols);

struct ZiplmResult {
    Matrix weights;  // final, explicitly masked
    PruneMask mask;
    std::vector<double> step_saliencies;
};

/// Removes exactly k structures greedily (argmin saliency, compensate,
/// downdate), then applies the cumulative mask explicitly. Ties in saliency
/// break toward the lowest structure index.
ZiplmResult run_ziplm(const Matrix& weights, const Matrix& hinv, Index k,
                      const StructureGroup& group);

/// p_s = ||Ŵ·X − W·X||_F / ||W·X||_F. Errors when ||W·X||_F = 0.
double measure_relative_error(const Matrix& w_hat, const Matrix& w, const Matrix& x);

/// Kept-width grid for FFN-style groups: round(d_int · 0.9^i) for i = 0..42
/// (round-half-away-from-zero, deduplicated, descending) plus the full drop.
std::vector<Index> ffn_kept_widths(Index d_int);

/// Kept-structure counts for one group on its sparsity grid, level order
/// (level 0 = dense). Heads: N, N-1, ..., 0. FFN/generic: the 0.9^i widths.
std::vector<Index> grid_kept_structures(const StructureGroup& group);

/// Runs one single-pass removal sequence and snapshots a variant at every
/// grid level, measuring each variant's relative error on `x`.
LayerDatabase build_database(const std::string& layer_name, const Matrix& weights,
                             const Matrix& hinv, const Matrix& x,
                             const StructureGroup& group);

struct CompactResult {
    Matrix target;                    // masked columns deleted
    std::optional<Matrix> producer;   // linked rows deleted
    std::vector<Index> kept_columns;  // target columns retained, ascending
    std::vector<Index> kept_producer_rows;
};

/// Physically shrinks a variant's target matrix (and its linked producer, as
/// declared by the group). The composed layer output is unchanged.
CompactResult compact(const PrunedVariant& variant, const StructureGroup& group,
                      const Matrix& producer);

// Database container I/O: `index.json` plus one weight blob per variant
// under `dir`, model_store blob conventions.
void save_database(const LayerDatabase& db, const std::filesystem::path& dir);
LayerDatabase load_database(const std::filesystem::path& dir);

}  // namespace zipkit

#endif  // ZIPKIT_ZIP_PRUNER_HPP
