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
#include "zipkit/chain.hpp"

namespace zipkit {

namespace {

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

}  // namespace

ChainModel make_chain(const Model& model) {
    ChainModel chain;
    chain.hidden_dim = model.manifest.hidden_dim;
    for (const LayerSpec& layer : model.manifest.layers) {
        if (layer.groups.empty())
            throw InputError("layer '" + layer.name + "' has no structure group; not a chain block");
        const StructureGroup& group = layer.groups.front();
        if (!group.linked_producer)
            throw InputError("layer '" + layer.name + "' has no linked producer; not a chain block");
        ChainBlock block;
        block.layer = layer.name;
        block.target = model.matrix(group.target_matrix);
        block.producer = model.matrix(group.linked_producer->matrix);
        block.group = group;
        if (block.target.rows() != chain.hidden_dim)
            throw InputError("chain stitch error between model input and layer '" + layer.name +
                             "': target rows != hidden_dim");
        if (block.producer.cols() != chain.hidden_dim)
            throw InputError("chain stitch error between model input and layer '" + layer.name +
                             "': producer cols != hidden_dim");
        if (block.producer.rows() != block.target.cols())
            throw InputError("chain stitch error in layer pair ('" +
                             group.linked_producer->matrix + "', '" + group.target_matrix +
                             "'): producer rows != target cols");
        chain.blocks.push_back(std::move(block));
    }
    return chain;
}

Matrix chain_forward(const ChainModel& chain, const Matrix& inputs,
                     const std::map<std::string, const Matrix*>& overrides) {
    if (inputs.rows() != chain.hidden_dim)
        throw InputError("chain inputs must have hidden_dim rows");
    Matrix h = inputs;
    for (const ChainBlock& block : chain.blocks) {
        const Matrix* target = &block.target;
        if (auto it = overrides.find(block.layer); it != overrides.end()) {
            if (it->second == nullptr) continue;  // dropped module: identity passthrough
            target = it->second;
        }
        if (target->rows() != chain.hidden_dim || target->cols() != block.producer.rows())
            throw InputError("chain stitch error in layer '" + block.layer +
                             "': override shape does not match producer");
        h = h + *target * relu(block.producer * h);
    }
    return h;
}

std::map<std::string, Matrix> collect_layer_inputs(const ChainModel& chain, const Matrix& inputs) {
    std::map<std::string, Matrix> per_layer;
    Matrix h = inputs;
    for (const ChainBlock& block : chain.blocks) {
        Matrix x = relu(block.producer * h);
        h = h + block.target * x;
        per_layer[block.layer] = std::move(x);
    }
    return per_layer;
}

Model compact_chain_model(const Model& model,
                          const std::map<std::string, const PrunedVariant*>& choices,
                          const std::map<std::string, std::string>& provenance) {
    Model out;
    out.manifest.format_version = model.manifest.format_version;
    out.manifest.hidden_dim = model.manifest.hidden_dim;
    out.manifest.metadata = model.manifest.metadata;
    for (const auto& [k, v] : provenance) out.manifest.metadata[k] = v;

    for (const LayerSpec& layer : model.manifest.layers) {
        auto cit = choices.find(layer.name);
        if (cit == choices.end()) {
            // untouched layer: copy as is
            out.manifest.layers.push_back(layer);
            for (const MatrixRecord& rec : layer.matrices)
                out.matrices[rec.name] = model.matrix(rec.name);
            continue;
        }
        const PrunedVariant& variant = *cit->second;
        const StructureGroup& group = layer.groups.front();
        if (variant.kept_structures == 0) continue;  // fully dropped: omit the block

        CompactResult compacted =
            compact(variant, group, model.matrix(group.linked_producer->matrix));

        LayerSpec spec;
        spec.name = layer.name;
        const std::string target_name = group.target_matrix;
        const std::string producer_name = group.linked_producer->matrix;
        spec.matrices.push_back(MatrixRecord{producer_name, compacted.producer->rows(),
                                             compacted.producer->cols(), producer_name + ".bin"});
        spec.matrices.push_back(MatrixRecord{target_name, compacted.target.rows(),
                                             compacted.target.cols(), target_name + ".bin"});

        // re-index the surviving structures against the compacted columns
        StructureGroup new_group;
        new_group.target_matrix = target_name;
        new_group.kind = group.kind;
        new_group.structure_width = group.structure_width;
        std::map<Index, Index> col_remap;
        for (std::size_t j = 0; j < compacted.kept_columns.size(); ++j)
            col_remap[compacted.kept_columns[j]] = static_cast<Index>(j);
        std::map<Index, Index> row_remap;
        for (std::size_t i = 0; i < compacted.kept_producer_rows.size(); ++i)
            row_remap[compacted.kept_producer_rows[i]] = static_cast<Index>(i);
        for (const auto& structure : group.structures) {
            bool kept = true;
            for (Index c : structure)
                if (!col_remap.count(c)) kept = false;
            if (!kept) continue;
            std::vector<Index> remapped;
            for (Index c : structure) remapped.push_back(col_remap.at(c));
            new_group.structures.push_back(std::move(remapped));
        }
        LinkedProducer link;
        link.matrix = producer_name;
        link.rows.assign(static_cast<std::size_t>(compacted.target.cols()), -1);
        for (Index c = 0; c < static_cast<Index>(group.linked_producer->rows.size()); ++c) {
            auto rc = col_remap.find(c);
            if (rc == col_remap.end()) continue;
            const Index old_row = group.linked_producer->rows[static_cast<std::size_t>(c)];
            if (old_row >= 0)
                link.rows[static_cast<std::size_t>(rc->second)] = row_remap.at(old_row);
        }
        new_group.linked_producer = std::move(link);
        spec.groups.push_back(std::move(new_group));

        out.matrices[producer_name] = *compacted.producer;
        out.matrices[target_name] = compacted.target;
        out.manifest.layers.push_back(std::move(spec));
    }
    return out;
}

long parameter_count(const Model& model) {
    long total = 0;
    for (const auto& [name, m] : model.matrices) total += static_cast<long>(m.size());
    return total;
}

}  // namespace zipkit
