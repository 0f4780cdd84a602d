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
#ifndef ZIPKIT_LATENCY_HPP
#define ZIPKIT_LATENCY_HPP

#include "zipkit/model_store.hpp"
#include "zipkit/types.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace zipkit {

/// Latency sums and feasibility checks run on int64 nanoseconds so that
/// additivity is exact; the ms doubles are kept for file round-trips.
inline std::int64_t ms_to_ns(double ms) { return std::llround(ms * 1e6); }
inline double ns_to_ms(std::int64_t ns) { return static_cast<double>(ns) / 1e6; }

struct LatencyEntry {
    std::int64_t key = 0;  // heads kept, or kept intermediate width
    double ms = 0.0;
    std::int64_t ns = 0;
};

struct LatencyTable {
    std::string device;
    double dense_runtime_ms = 0.0;
    std::int64_t dense_runtime_ns = 0;
    std::map<GroupKind, std::vector<LatencyEntry>> kinds;  // entries sorted by key

    /// Exact entry, or linear interpolation in kept-width between the two
    /// nearest entries. Extrapolation beyond the table range is an error;
    /// with `interpolate` false any missing key is an error.
    std::int64_t lookup_ns(GroupKind kind, std::int64_t key, bool interpolate = true) const;

    /// Checks entry ordering, nonnegative latencies and the zero-cost
    /// all-pruned entry; injects an implicit {0, 0 ms} row where absent.
    void validate_and_normalize();
};

/// One layer-group's structural choice, keyed the way the table is.
struct LayerGroupChoice {
    std::string layer;
    GroupKind kind = GroupKind::generic;
    std::int64_t key = 0;
};

std::int64_t estimate_runtime_ns(const std::vector<LayerGroupChoice>& config,
                                 const LatencyTable& table, bool interpolate = true);

struct SpeedupEstimate {
    std::int64_t config_ns = 0;
    std::int64_t dense_ns = 0;
    double speedup = 1.0;
    bool infinite = false;  // config runtime was exactly zero
};

SpeedupEstimate estimate_speedup(const std::vector<LayerGroupChoice>& config,
                                 const LatencyTable& table, bool interpolate = true);

/// Median wall-clock milliseconds of a dense float32 matrix multiply
/// (rows x cols) · (cols x batch) after `warmup` discarded runs. Requires
/// reps >= 3. Zero-width shapes return 0 without timing. When a sample is
/// shorter than 10x the measured clock granularity the inner loop count is
/// grown automatically (a warning is emitted once).
double bench_kernel(Index rows, Index cols, Index batch, int reps = 9, int warmup = 3);

struct BenchOptions {
    Index batch = 128;
    int reps = 9;
    int warmup = 3;
};

/// Micro-benchmarks every grid level of every group kind in the model and
/// assembles a table; dense_runtime is the exact ns sum of the dense entries
/// over the model's layer-groups.
LatencyTable build_table_for_model(const Model& model, const BenchOptions& opts,
                                   const std::string& device_label = "host-cpu");

LatencyTable load_table(const std::filesystem::path& path);
void save_table(const LatencyTable& table, const std::filesystem::path& path);

}  // namespace zipkit

#endif  // ZIPKIT_LATENCY_HPP
