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
#ifndef ZIPKIT_SEARCH_HPP
#define ZIPKIT_SEARCH_HPP

#include "zipkit/chain.hpp"
#include "zipkit/latency.hpp"
#include "zipkit/types.hpp"
#include "zipkit/zip_pruner.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace zipkit {

/// One selectable sparsity level of a layer-group.
struct LevelOption {
    int level_index = 0;
    Index kept_structures = 0;
    std::int64_t latency_key = 0;
    std::int64_t ns = 0;
    double error = 0.0;  // measured p_s
};

struct LayerGroupGrid {
    std::string layer;
    GroupKind kind = GroupKind::generic;
    std::vector<LevelOption> levels;  // level-index order (dense first)
};

/// Joins the per-layer databases with the latency table (keys resolved per
/// kind, interpolated where the table is coarser than the grid).
std::vector<LayerGroupGrid> make_grids(const std::vector<const LayerDatabase*>& databases,
                                       const std::vector<const StructureGroup*>& groups,
                                       const LatencyTable& table);

struct Budget {
    double target_speedup = 1.0;
    std::int64_t budget_ns = 0;
    std::int64_t dense_ns = 0;

    /// budget = floor(dense_runtime / target). Requires target >= 1, so any
    /// config within budget meets the speedup exactly.
    static Budget from_target(double target_speedup, std::int64_t dense_ns);
};

struct CandidateConfig {
    std::vector<int> levels;  // chosen level index per grid entry
    std::int64_t runtime_ns = 0;
    double speedup = 1.0;
    double loss = 0.0;
};

/// Loss of a candidate given its chosen levels; must be deterministic.
using Evaluator = std::function<double(const std::vector<int>& levels)>;

/// Exact DP over layers x discretized time (budget / 10^4 buckets, costs
/// rounded up, so feasibility is conservative). Minimizes Σ c·p subject to
/// the runtime budget; ties break toward smaller runtime, then lower layer
/// index. The returned runtime is the exact (unbucketed) ns sum.
CandidateConfig dp_solve(const std::vector<LayerGroupGrid>& grids,
                         const std::vector<double>& coefficients, const Budget& budget);

struct SearchResult {
    CandidateConfig best;
    std::vector<double> coefficients;   // final accepted sensitivity coefficients
    std::vector<double> best_loss_trace;  // best-so-far after each step (incl. step 0)
    int accepted_steps = 0;
};

/// Random search over sensitivity coefficients: start at c = 1, mutate each
/// coefficient independently with probability `mutation_prob`
/// (c <- c·exp(U(-ln 2, ln 2))), solve the DP, evaluate, keep the mutation
/// only on strict improvement. Fully reproducible from `seed`.
SearchResult spdy_search(const std::vector<LayerGroupGrid>& grids, const Budget& budget,
                         const Evaluator& evaluator, int steps = 1000,
                         double mutation_prob = 0.1, std::uint64_t seed = 0);

struct TargetPlan {
    double target_speedup = 1.0;
    Budget budget;
    SearchResult result;
};

/// One spdy_search per target (ascending), reusing grids. Every emitted
/// config satisfies estimated speedup >= its target. The per-target seed is
/// seed + target position.
std::vector<TargetPlan> plan_targets(const std::vector<LayerGroupGrid>& grids,
                                     std::int64_t dense_ns, const std::vector<double>& targets,
                                     const Evaluator& evaluator, int steps = 1000,
                                     double mutation_prob = 0.1, std::uint64_t seed = 0);

/// loss(config) = Σ p over the chosen levels.
Evaluator proxy_evaluator(const std::vector<LayerGroupGrid>& grids);

/// Mean squared error of the stitched compressed chain against reference
/// outputs. `databases` must align with `grids`.
Evaluator chain_evaluator(const ChainModel& chain, const std::vector<LayerGroupGrid>& grids,
                          const std::vector<const LayerDatabase*>& databases,
                          const Matrix& inputs, const Matrix& reference_outputs);

}  // namespace zipkit

#endif  // ZIPKIT_SEARCH_HPP
