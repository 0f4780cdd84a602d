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
#ifndef ZIPKIT_CHAIN_HPP
#define ZIPKIT_CHAIN_HPP

#include "zipkit/model_store.hpp"
#include "zipkit/types.hpp"
#include "zipkit/zip_pruner.hpp"

#include <map>
#include <string>
#include <vector>

namespace zipkit {

/// Sequential residual-block view of a model: each block computes
/// h <- h + target · relu(producer · h). The target matrix carries the
/// prunable column structures; the producer rows are linked 1:1.
struct ChainBlock {
    std::string layer;
    Matrix producer;  // d_int x H
    Matrix target;    // H x d_int
    StructureGroup group;
};

struct ChainModel {
    Index hidden_dim = 0;
    std::vector<ChainBlock> blocks;
};

/// Builds the chain view, validating that every block stitches
/// shape-consistently (names the offending layer pair otherwise).
ChainModel make_chain(const Model& model);

/// Forward pass on column-stacked inputs (H x n). `overrides` substitutes a
/// block's target matrix (masked variant weights); a null pointer drops the
/// block entirely (identity passthrough).
Matrix chain_forward(const ChainModel& chain, const Matrix& inputs,
                     const std::map<std::string, const Matrix*>& overrides = {});

/// Per-layer inputs to each block's target matrix, i.e. relu(producer · h)
/// collected along the dense forward pass. These are what the calibration
/// section of a chain container stores.
std::map<std::string, Matrix> collect_layer_inputs(const ChainModel& chain,
                                                   const Matrix& inputs);

/// Builds the physically compacted model for one chosen variant per layer.
/// Fully-dropped blocks are omitted (identity passthrough). Provenance
/// strings are merged into the manifest metadata.
Model compact_chain_model(const Model& model,
                          const std::map<std::string, const PrunedVariant*>& choices,
                          const std::map<std::string, std::string>& provenance = {});

/// Total element count over all matrices.
long parameter_count(const Model& model);

}  // namespace zipkit

#endif  // ZIPKIT_CHAIN_HPP
