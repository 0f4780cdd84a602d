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
#include "zipkit/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace zipkit {

namespace {

constexpr int kTimeBuckets = 10000;
constexpr double kLn2 = 0.6931471805599453;

}  // namespace

std::vector<LayerGroupGrid> make_grids(const std::vector<const LayerDatabase*>& databases,
                                       const std::vector<const StructureGroup*>& groups,
                                       const LatencyTable& table) {
    if (databases.size() != groups.size())
        throw InputError("make_grids: databases and groups must align");
    std::vector<LayerGroupGrid> grids;
    for (std::size_t i = 0; i < databases.size(); ++i) {
        const LayerDatabase& db = *databases[i];
        const StructureGroup& group = *groups[i];
        LayerGroupGrid grid;
        grid.layer = db.layer;
        grid.kind = group.kind;
        const int levels = db.level_count(group.kind);
        if (levels == 0)
            throw InputError("database for layer '" + db.layer + "' has no variants of kind " +
                             std::string(to_string(group.kind)));
        for (int lv = 0; lv < levels; ++lv) {
            const PrunedVariant& v = db.variant(group.kind, lv);
            LevelOption opt;
            opt.level_index = lv;
            opt.kept_structures = v.kept_structures;
            opt.latency_key = group.kind == GroupKind::attention_heads
                                  ? v.kept_structures
                                  : v.kept_structures * group.structure_width;
            opt.ns = table.lookup_ns(group.kind, opt.latency_key);
            opt.error = v.relative_error;
            grid.levels.push_back(opt);
        }
        grids.push_back(std::move(grid));
    }
    return grids;
}

Budget Budget::from_target(double target_speedup, std::int64_t dense_ns) {
    if (!(target_speedup >= 1.0))
        throw InputError("target speedup must be >= 1.0, got " + std::to_string(target_speedup));
    if (dense_ns <= 0) throw TableError("dense runtime must be positive");
    Budget b;
    b.target_speedup = target_speedup;
    b.dense_ns = dense_ns;
    b.budget_ns =
        static_cast<std::int64_t>(std::floor(static_cast<double>(dense_ns) / target_speedup));
    return b;
}

CandidateConfig dp_solve(const std::vector<LayerGroupGrid>& grids,
                         const std::vector<double>& coefficients, const Budget& budget) {
    const std::size_t n = grids.size();
    if (n == 0) throw InputError("dp_solve: no layer-groups");
    if (coefficients.size() != n)
        throw InputError("dp_solve: coefficient count must match layer-group count");
    for (double c : coefficients)
        if (!(c > 0)) throw InputError("dp_solve: sensitivity coefficients must be positive");

    // budget at or above the dense runtime: when every grid's first level
    // carries its minimal error (p = 0 for real databases), the all-dense
    // config is optimal outright and must not be lost to bucket rounding
    {
        std::int64_t dense_sum = 0;
        bool level0_minimal = true;
        for (const LayerGroupGrid& grid : grids) {
            if (grid.levels.empty()) throw InputError("dp_solve: empty level grid");
            dense_sum += grid.levels.front().ns;
            for (const LevelOption& opt : grid.levels)
                if (opt.error < grid.levels.front().error) level0_minimal = false;
        }
        if (level0_minimal && dense_sum <= budget.budget_ns) {
            CandidateConfig config;
            config.levels.assign(n, 0);
            config.runtime_ns = dense_sum;
            config.loss = 0;
            for (std::size_t i = 0; i < n; ++i)
                config.loss += coefficients[i] * grids[i].levels.front().error;
            config.speedup = config.runtime_ns == 0
                                 ? std::numeric_limits<double>::infinity()
                                 : static_cast<double>(budget.dense_ns) /
                                       static_cast<double>(config.runtime_ns);
            return config;
        }
    }

    // conservative discretization: costs round up, capacity rounds down
    const std::int64_t bucket_ns =
        std::max<std::int64_t>(1, (budget.budget_ns + kTimeBuckets - 1) / kTimeBuckets);
    const int capacity = static_cast<int>(budget.budget_ns / bucket_ns);

    constexpr double kInf = std::numeric_limits<double>::infinity();
    const std::size_t width = static_cast<std::size_t>(capacity) + 1;

    std::vector<double> prev_obj(width, kInf), cur_obj(width, kInf);
    std::vector<std::int64_t> prev_ns(width, 0), cur_ns(width, 0);
    std::vector<std::vector<std::int16_t>> choice(n, std::vector<std::int16_t>(width, -1));

    std::fill(prev_obj.begin(), prev_obj.end(), 0.0);  // zero groups: zero cost
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(cur_obj.begin(), cur_obj.end(), kInf);
        std::fill(cur_ns.begin(), cur_ns.end(), 0);
        const LayerGroupGrid& grid = grids[i];
        for (std::size_t lv = 0; lv < grid.levels.size(); ++lv) {
            const LevelOption& opt = grid.levels[lv];
            const std::int64_t cost = (opt.ns + bucket_ns - 1) / bucket_ns;
            if (cost > capacity) continue;
            const double term = coefficients[i] * opt.error;
            for (std::size_t b = static_cast<std::size_t>(cost); b < width; ++b) {
                const std::size_t rem = b - static_cast<std::size_t>(cost);
                if (prev_obj[rem] == kInf) continue;
                const double obj = prev_obj[rem] + term;
                const std::int64_t ns = prev_ns[rem] + opt.ns;
                // ties break toward smaller exact runtime, then the earlier level
                if (obj < cur_obj[b] || (obj == cur_obj[b] && ns < cur_ns[b])) {
                    cur_obj[b] = obj;
                    cur_ns[b] = ns;
                    choice[i][b] = static_cast<std::int16_t>(lv);
                }
            }
        }
        std::swap(prev_obj, cur_obj);
        std::swap(prev_ns, cur_ns);
    }

    // lowest capacity attaining the optimum = smallest runtime among ties
    std::size_t best_b = width;
    for (std::size_t b = 0; b < width; ++b) {
        if (prev_obj[b] == kInf) continue;
        if (best_b == width || prev_obj[b] < prev_obj[best_b] ||
            (prev_obj[b] == prev_obj[best_b] && prev_ns[b] < prev_ns[best_b]))
            best_b = b;
    }
    if (best_b == width)
        throw TableError("dp_solve: no feasible configuration (corrupt latency table: the "
                         "all-pruned level should always fit)");

    CandidateConfig config;
    config.levels.resize(n);
    config.loss = prev_obj[best_b];
    std::size_t b = best_b;
    for (std::size_t i = n; i-- > 0;) {
        // choice tables were swapped along; recompute the path from records
        const std::int16_t lv = choice[i][b];
        if (lv < 0) throw NumericalError("dp_solve: reconstruction failed");
        config.levels[i] = lv;
        const LevelOption& opt = grids[i].levels[static_cast<std::size_t>(lv)];
        b -= static_cast<std::size_t>((opt.ns + bucket_ns - 1) / bucket_ns);
    }
    config.runtime_ns = 0;
    for (std::size_t i = 0; i < n; ++i)
        config.runtime_ns += grids[i].levels[static_cast<std::size_t>(config.levels[i])].ns;
    if (config.runtime_ns > budget.budget_ns)
        throw NumericalError("dp_solve: produced config exceeds the budget");
    config.speedup = config.runtime_ns == 0
                         ? std::numeric_limits<double>::infinity()
                         : static_cast<double>(budget.dense_ns) /
                               static_cast<double>(config.runtime_ns);
    return config;
}

namespace {

/// One mutation pass: every coefficient independently, with probability p,
/// multiplied by exp(U(-ln 2, ln 2)).
std::vector<double> mutate(const std::vector<double>& c, double prob, Rng& rng) {
    std::vector<double> out = c;
    for (double& v : out) {
        if (rng.uniform01() < prob) v *= std::exp(rng.uniform(-kLn2, kLn2));
    }
    return out;
}

}  // namespace

SearchResult spdy_search(const std::vector<LayerGroupGrid>& grids, const Budget& budget,
                         const Evaluator& evaluator, int steps, double mutation_prob,
                         std::uint64_t seed) {
    if (!evaluator) throw InputError("spdy_search: evaluator is required");
    if (steps < 0) throw InputError("spdy_search: steps must be >= 0");
    if (mutation_prob < 0 || mutation_prob > 1)
        throw InputError("spdy_search: mutation probability must be in [0, 1]");

    Rng rng(seed);
    SearchResult result;
    result.coefficients.assign(grids.size(), 1.0);

    CandidateConfig config = dp_solve(grids, result.coefficients, budget);
    config.loss = evaluator(config.levels);
    result.best = config;
    result.best_loss_trace.push_back(config.loss);

    for (int step = 0; step < steps; ++step) {
        std::vector<double> cand = mutate(result.coefficients, mutation_prob, rng);
        CandidateConfig c = dp_solve(grids, cand, budget);
        if (c.runtime_ns > budget.budget_ns)
            throw NumericalError("spdy_search: candidate violated the runtime budget");
        c.loss = evaluator(c.levels);
        if (c.loss < result.best.loss) {
            result.best = c;
            result.coefficients = std::move(cand);
            ++result.accepted_steps;
        }
        result.best_loss_trace.push_back(result.best.loss);
    }
    return result;
}

std::vector<TargetPlan> plan_targets(const std::vector<LayerGroupGrid>& grids,
                                     std::int64_t dense_ns, const std::vector<double>& targets,
                                     const Evaluator& evaluator, int steps, double mutation_prob,
                                     std::uint64_t seed) {
    if (!std::is_sorted(targets.begin(), targets.end()))
        throw InputError("plan_targets: speedup targets must be sorted ascending");
    std::vector<TargetPlan> plans;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        TargetPlan plan;
        plan.target_speedup = targets[i];
        plan.budget = Budget::from_target(targets[i], dense_ns);
        plan.result = spdy_search(grids, plan.budget, evaluator, steps, mutation_prob,
                                  seed + static_cast<std::uint64_t>(i));
        if (plan.result.best.speedup < plan.target_speedup)
            throw NumericalError("plan_targets: emitted config misses its speedup target");
        plans.push_back(std::move(plan));
    }
    return plans;
}

Evaluator proxy_evaluator(const std::vector<LayerGroupGrid>& grids) {
    std::vector<std::vector<double>> errors;
    for (const LayerGroupGrid& g : grids) {
        std::vector<double> e;
        for (const LevelOption& opt : g.levels) e.push_back(opt.error);
        errors.push_back(std::move(e));
    }
    return [errors](const std::vector<int>& levels) {
        if (levels.size() != errors.size())
            throw InputError("proxy evaluator: config size mismatch");
        double loss = 0;
        for (std::size_t i = 0; i < levels.size(); ++i)
            loss += errors[i][static_cast<std::size_t>(levels[i])];
        return loss;
    };
}

Evaluator chain_evaluator(const ChainModel& chain, const std::vector<LayerGroupGrid>& grids,
                          const std::vector<const LayerDatabase*>& databases,
                          const Matrix& inputs, const Matrix& reference_outputs) {
    if (databases.size() != grids.size())
        throw InputError("chain evaluator: databases and grids must align");
    for (std::size_t i = 0; i < grids.size(); ++i)
        if (databases[i]->layer != grids[i].layer)
            throw InputError("chain evaluator: database/grid layer mismatch at index " +
                             std::to_string(i));
    if (reference_outputs.rows() != inputs.rows() || reference_outputs.cols() != inputs.cols())
        throw InputError("chain evaluator: reference output shape must match inputs");

    // capture by value; the evaluator must outlive the call site's locals
    const ChainModel chain_copy = chain;
    std::vector<LayerGroupGrid> grids_copy = grids;
    std::vector<LayerDatabase> dbs;
    for (const LayerDatabase* db : databases) dbs.push_back(*db);
    const Matrix in = inputs;
    const Matrix ref = reference_outputs;

    return [chain_copy, grids_copy, dbs, in, ref](const std::vector<int>& levels) {
        if (levels.size() != grids_copy.size())
            throw InputError("chain evaluator: config size mismatch");
        std::map<std::string, const Matrix*> overrides;
        for (std::size_t i = 0; i < levels.size(); ++i) {
            const PrunedVariant& v =
                dbs[i].variant(grids_copy[i].kind, levels[i]);
            overrides[grids_copy[i].layer] = v.kept_structures == 0 ? nullptr : &v.weights;
        }
        const Matrix out = chain_forward(chain_copy, in, overrides);
        return (out - ref).squaredNorm() / static_cast<double>(ref.size());
    };
}

}  // namespace zipkit
