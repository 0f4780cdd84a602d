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
#ifndef ZIPKIT_MODEL_STORE_HPP
#define ZIPKIT_MODEL_STORE_HPP

#include "zipkit/types.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace zipkit {

/// On-disk container layout: one `manifest.json` plus one raw blob per matrix
/// (`<name>.bin`, little-endian binary32, row-major, no header).

struct MatrixRecord {
    std::string name;
    Index rows = 0;
    Index cols = 0;
    std::string blob;  // file name relative to the container directory
};

/// Maps pruned target columns to the producer-matrix rows that feed them.
/// `rows[j]` is the producer row for target column j, or -1 where no link
/// exists (only legal for columns not covered by any structure).
struct LinkedProducer {
    std::string matrix;
    std::vector<Index> rows;
};

struct StructureGroup {
    std::string target_matrix;
    GroupKind kind = GroupKind::generic;
    Index structure_width = 1;
    std::vector<std::vector<Index>> structures;  // disjoint column-index sets
    std::optional<LinkedProducer> linked_producer;

    /// Union of all structure columns, ascending.
    std::vector<Index> covered_columns() const;
};

struct LayerSpec {
    std::string name;
    std::vector<MatrixRecord> matrices;
    std::vector<StructureGroup> groups;

    const MatrixRecord* find_matrix(const std::string& name) const;
};

struct CalibrationRef {
    std::string blob;
    Index rows = 0;
    Index cols = 0;
};

struct ModelManifest {
    int format_version = 1;
    Index hidden_dim = 0;
    std::vector<LayerSpec> layers;
    std::map<std::string, std::string> metadata;
    std::map<std::string, CalibrationRef> calibration;  // layer name -> X blob
    std::optional<CalibrationRef> chain_input;  // whole-model inputs, for end-to-end eval

    const LayerSpec* find_layer(const std::string& name) const;
};

struct Model {
    ModelManifest manifest;
    std::map<std::string, Matrix> matrices;

    const Matrix& matrix(const std::string& name) const;
};

struct CalibrationSet {
    std::map<std::string, Matrix> inputs;  // layer name -> X (d_col x n_samples)
    Index sample_count = 0;
    std::optional<std::vector<std::uint8_t>> padding;  // per-position flags, distillation use

    /// Keep only the first n sample columns of every layer input.
    void truncate(Index n);
};

// Blob primitives (shared by the variant database and the CLI).
Matrix read_blob_f32(const std::filesystem::path& path, Index rows, Index cols);
void write_blob_f32(const std::filesystem::path& path, const Matrix& m);

Model load_model(const std::filesystem::path& dir);
void save_model(const Model& model, const std::filesystem::path& dir);

/// Loads the calibration section of an already-loaded model. Shapes are
/// validated against each layer's target matrix.
CalibrationSet load_calibration(const std::filesystem::path& dir, const Model& model);

/// Invariant checks shared by load and save (unique names, blob shapes,
/// disjoint structures, producer bijection). Throws InputError.
void validate_manifest(const ModelManifest& manifest);

}  // namespace zipkit

#endif  // ZIPKIT_MODEL_STORE_HPP
