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
#include "zipkit/latency.hpp"

#include "zipkit/zip_pruner.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

namespace zipkit {

namespace fs = std::filesystem;
using nlohmann::json;

void LatencyTable::validate_and_normalize() {
    if (!(dense_runtime_ms > 0))
        throw TableError("latency table: dense_runtime_ms must be positive");
    dense_runtime_ns = ms_to_ns(dense_runtime_ms);
    for (auto& [kind, entries] : kinds) {
        std::sort(entries.begin(), entries.end(),
                  [](const LatencyEntry& a, const LatencyEntry& b) { return a.key < b.key; });
        bool has_zero = false;
        std::int64_t prev_key = -1;
        for (LatencyEntry& e : entries) {
            if (e.key < 0)
                throw TableError("latency table: negative key for kind " +
                                 std::string(to_string(kind)));
            if (e.key == prev_key)
                throw TableError("latency table: duplicate key " + std::to_string(e.key) +
                                 " for kind " + std::string(to_string(kind)));
            prev_key = e.key;
            if (e.ms < 0 || !std::isfinite(e.ms))
                throw TableError("latency table: entry (" + std::string(to_string(kind)) + ", " +
                                 std::to_string(e.key) + ") has invalid latency " +
                                 std::to_string(e.ms) + " ms");
            e.ns = ms_to_ns(e.ms);
            if (e.key == 0) {
                if (e.ns != 0)
                    throw TableError("latency table: the all-pruned entry must be exactly 0 ms");
                has_zero = true;
            }
        }
        // pruning everything costs nothing; inject the implicit row
        if (!has_zero) entries.insert(entries.begin(), LatencyEntry{0, 0.0, 0});
    }
}

std::int64_t LatencyTable::lookup_ns(GroupKind kind, std::int64_t key, bool interpolate) const {
    auto kit = kinds.find(kind);
    if (kit == kinds.end())
        throw TableError("latency table has no entries for kind " +
                         std::string(to_string(kind)));
    const std::vector<LatencyEntry>& entries = kit->second;
    auto it = std::lower_bound(entries.begin(), entries.end(), key,
                               [](const LatencyEntry& e, std::int64_t k) { return e.key < k; });
    if (it != entries.end() && it->key == key) return it->ns;
    if (!interpolate)
        throw TableError("latency table: missing entry (" + std::string(to_string(kind)) + ", " +
                         std::to_string(key) + ") and interpolation is disabled");
    if (it == entries.begin() || it == entries.end())
        throw TableError("latency table: key " + std::to_string(key) + " for kind " +
                         std::string(to_string(kind)) +
                         " is outside the table range (extrapolation is forbidden)");
    const LatencyEntry& hi = *it;
    const LatencyEntry& lo = *(it - 1);
    const double t = static_cast<double>(key - lo.key) / static_cast<double>(hi.key - lo.key);
    return lo.ns + std::llround(t * static_cast<double>(hi.ns - lo.ns));
}

std::int64_t estimate_runtime_ns(const std::vector<LayerGroupChoice>& config,
                                 const LatencyTable& table, bool interpolate) {
    std::int64_t total = 0;
    for (const LayerGroupChoice& choice : config)
        total += table.lookup_ns(choice.kind, choice.key, interpolate);
    return total;
}

SpeedupEstimate estimate_speedup(const std::vector<LayerGroupChoice>& config,
                                 const LatencyTable& table, bool interpolate) {
    SpeedupEstimate est;
    est.config_ns = estimate_runtime_ns(config, table, interpolate);
    est.dense_ns = table.dense_runtime_ns;
    if (est.config_ns == 0) {
        est.infinite = true;
        est.speedup = std::numeric_limits<double>::infinity();
    } else {
        est.speedup = static_cast<double>(est.dense_ns) / static_cast<double>(est.config_ns);
    }
    return est;
}

namespace {

using Clock = std::chrono::steady_clock;
using FMatrix = Eigen::MatrixXf;

/// Smallest observable positive tick of the steady clock.
double clock_granularity_ms() {
    double best = 1.0;
    for (int i = 0; i < 16; ++i) {
        auto t0 = Clock::now();
        auto t1 = t0;
        do {
            t1 = Clock::now();
        } while (t1 == t0);
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        best = std::min(best, ms);
    }
    return std::max(best, 1e-7);
}

double time_multiply_ms(const FMatrix& a, const FMatrix& b, FMatrix& out, int inner) {
    // volatile sink keeps the loop body from being hoisted
    volatile float sink = 0.0f;
    const auto t0 = Clock::now();
    for (int i = 0; i < inner; ++i) {
        out.noalias() = a * b;
        sink = sink + out(0, 0);
    }
    const auto t1 = Clock::now();
    (void)sink;
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / inner;
}

}  // namespace

double bench_kernel(Index rows, Index cols, Index batch, int reps, int warmup) {
    if (reps < 3) throw InputError("bench_kernel requires reps >= 3");
    if (rows <= 0 || cols <= 0 || batch <= 0) return 0.0;

    FMatrix a(rows, cols);
    FMatrix b(cols, batch);
    FMatrix out(rows, batch);
    // deterministic fill; values are irrelevant to timing
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i)
            a(i, j) = static_cast<float>(((i * 31 + j * 17) % 97) - 48) / 48.0f;
        for (Index k = 0; k < batch; ++k)
            b(j, k) = static_cast<float>(((j * 13 + k * 29) % 89) - 44) / 44.0f;
    }

    static const double granularity = clock_granularity_ms();
    static bool warned = false;

    int inner = 1;
    for (;;) {
        for (int i = 0; i < warmup; ++i) out.noalias() = a * b;
        std::vector<double> samples(static_cast<std::size_t>(reps));
        for (int r = 0; r < reps; ++r) samples[static_cast<std::size_t>(r)] = time_multiply_ms(a, b, out, inner);
        std::sort(samples.begin(), samples.end());
        const double median = samples[samples.size() / 2];
        if (median * inner >= 10.0 * granularity || inner >= (1 << 20)) return median;
        if (!warned) {
            std::cerr << "[bench] sample below 10x clock granularity; increasing inner loop\n";
            warned = true;
        }
        inner *= 4;
    }
}

LatencyTable build_table_for_model(const Model& model, const BenchOptions& opts,
                                   const std::string& device_label) {
    LatencyTable table;
    table.device = device_label;
    const Index hidden = model.manifest.hidden_dim;

    // one grid per kind, taken from the first layer-group of that kind
    for (const LayerSpec& layer : model.manifest.layers) {
        for (const StructureGroup& group : layer.groups) {
            if (table.kinds.count(group.kind)) continue;
            std::vector<LatencyEntry> entries;
            for (Index kept : grid_kept_structures(group)) {
                const Index width = kept * group.structure_width;
                // block time = target multiply + producer multiply
                const double ms = bench_kernel(hidden, width, opts.batch, opts.reps, opts.warmup) +
                                  bench_kernel(width, hidden, opts.batch, opts.reps, opts.warmup);
                const std::int64_t key =
                    group.kind == GroupKind::attention_heads ? kept : width;
                entries.push_back(LatencyEntry{key, ms, ms_to_ns(ms)});
            }
            table.kinds[group.kind] = std::move(entries);
        }
    }

    // dense runtime = exact sum of the dense entries over the model's groups
    std::int64_t dense_ns = 0;
    for (const LayerSpec& layer : model.manifest.layers) {
        for (const StructureGroup& group : layer.groups) {
            const Index n = static_cast<Index>(group.structures.size());
            const std::int64_t key =
                group.kind == GroupKind::attention_heads ? n : n * group.structure_width;
            for (const LatencyEntry& e : table.kinds[group.kind])
                if (e.key == key) dense_ns += e.ns;
        }
    }
    table.dense_runtime_ns = dense_ns;
    table.dense_runtime_ms = ns_to_ms(dense_ns);
    table.validate_and_normalize();
    return table;
}

LatencyTable load_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw TableError("cannot open latency table: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw TableError("latency table parse error: " + std::string(e.what()));
    }
    LatencyTable table;
    try {
        table.device = j.value("device", std::string("unknown"));
        if (!j.contains("dense_runtime_ms"))
            throw TableError("latency table: missing dense_runtime_ms");
        table.dense_runtime_ms = j.at("dense_runtime_ms").get<double>();
        for (const auto& [kind_name, entries] : j.at("kinds").items()) {
            const GroupKind kind = group_kind_from_string(kind_name);
            for (const json& je : entries) {
                LatencyEntry e;
                e.key = je.at("key").get<std::int64_t>();
                e.ms = je.at("ms").get<double>();
                table.kinds[kind].push_back(e);
            }
        }
    } catch (const json::exception& e) {
        throw TableError("latency table field error: " + std::string(e.what()));
    }
    table.validate_and_normalize();
    return table;
}

void save_table(const LatencyTable& table, const fs::path& path) {
    json j;
    j["device"] = table.device;
    j["dense_runtime_ms"] = table.dense_runtime_ms;
    json jk;
    for (const auto& [kind, entries] : table.kinds) {
        json arr = json::array();
        for (const LatencyEntry& e : entries) arr.push_back(json{{"key", e.key}, {"ms", e.ms}});
        jk[to_string(kind)] = std::move(arr);
    }
    j["kinds"] = std::move(jk);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("unwritable destination: " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace zipkit
