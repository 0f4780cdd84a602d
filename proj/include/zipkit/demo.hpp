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
#ifndef ZIPKIT_DEMO_HPP
#define ZIPKIT_DEMO_HPP

#include "zipkit/model_store.hpp"
#include "zipkit/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace zipkit {

/// Synthetic residual-chain container generator: blocks compute
/// h <- h + fc2·relu(fc1·h), with fc2 carrying the prunable columns and fc1
/// the linked producer rows. Useful for trying the pipeline end to end.
struct DemoBlockSpec {
    GroupKind kind = GroupKind::ffn_columns;
    Index structure_width = 1;
    Index structures = 24;
};

struct DemoSpec {
    Index hidden_dim = 16;
    Index samples = 256;
    std::uint64_t seed = 0;
    double weight_scale = 0.35;
    std::vector<DemoBlockSpec> blocks;
};

/// Parses "ffn:1x24,heads:4x8" into block specs (kind:widthxcount).
std::vector<DemoBlockSpec> parse_demo_blocks(const std::string& text);

/// Writes a complete container (manifest, weights, per-layer calibration,
/// chain input) to `dir`.
void write_demo_chain(const DemoSpec& spec, const std::filesystem::path& dir);

}  // namespace zipkit

#endif  // ZIPKIT_DEMO_HPP
