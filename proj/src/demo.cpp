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
#include "zipkit/demo.hpp"

#include "zipkit/chain.hpp"

#include <sstream>

namespace zipkit {

std::vector<DemoBlockSpec> parse_demo_blocks(const std::string& text) {
    std::vector<DemoBlockSpec> blocks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        const auto cross = item.find('x', colon == std::string::npos ? 0 : colon);
        if (colon == std::string::npos || cross == std::string::npos)
            throw InputError("bad block spec '" + item + "'; expected kind:widthxcount");
        DemoBlockSpec spec;
        const std::string kind = item.substr(0, colon);
        if (kind == "ffn")
            spec.kind = GroupKind::ffn_columns;
        else if (kind == "heads")
            spec.kind = GroupKind::attention_heads;
        else if (kind == "generic")
            spec.kind = GroupKind::generic;
        else
            throw InputError("bad block kind '" + kind + "'; use ffn, heads or generic");
        spec.structure_width = std::stoll(item.substr(colon + 1, cross - colon - 1));
        spec.structures = std::stoll(item.substr(cross + 1));
        if (spec.structure_width < 1 || spec.structures < 1)
            throw InputError("block spec '" + item + "' must have positive dimensions");
        blocks.push_back(spec);
    }
    if (blocks.empty()) throw InputError("no blocks in demo spec '" + text + "'");
    return blocks;
}

namespace {

Matrix random_f32_matrix(Rng& rng, Index rows, Index cols, double scale) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-scale, scale);
    return m.cast<float>().cast<double>();  // storage precision up front
}

}  // namespace

void write_demo_chain(const DemoSpec& spec, const std::filesystem::path& dir) {
    if (spec.hidden_dim < 1 || spec.samples < 1) throw InputError("demo spec dims must be >= 1");
    Rng rng(spec.seed);
    Model model;
    model.manifest.hidden_dim = spec.hidden_dim;
    model.manifest.metadata["model_kind"] = "chain";

    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const DemoBlockSpec& block = spec.blocks[b];
        const Index d_int = block.structure_width * block.structures;
        const std::string name = "block" + std::to_string(b);
        const std::string fc1 = name + ".fc1";
        const std::string fc2 = name + ".fc2";

        LayerSpec layer;
        layer.name = name;
        layer.matrices.push_back(MatrixRecord{fc1, d_int, spec.hidden_dim, fc1 + ".bin"});
        layer.matrices.push_back(MatrixRecord{fc2, spec.hidden_dim, d_int, fc2 + ".bin"});

        StructureGroup group;
        group.target_matrix = fc2;
        group.kind = block.kind;
        group.structure_width = block.structure_width;
        for (Index start = 0; start + block.structure_width <= d_int;
             start += block.structure_width) {
            std::vector<Index> cols;
            for (Index c = start; c < start + block.structure_width; ++c) cols.push_back(c);
            group.structures.push_back(std::move(cols));
        }
        LinkedProducer link;
        link.matrix = fc1;
        for (Index c = 0; c < d_int; ++c) link.rows.push_back(c);
        group.linked_producer = std::move(link);
        layer.groups.push_back(std::move(group));
        model.manifest.layers.push_back(std::move(layer));

        model.matrices[fc1] = random_f32_matrix(rng, d_int, spec.hidden_dim, spec.weight_scale);
        model.matrices[fc2] = random_f32_matrix(rng, spec.hidden_dim, d_int, spec.weight_scale);
    }

    Matrix h0 = random_f32_matrix(rng, spec.hidden_dim, spec.samples, 1.0);
    std::map<std::string, Matrix> inputs = collect_layer_inputs(make_chain(model), h0);
    for (const auto& [lname, x] : inputs)
        model.manifest.calibration[lname] = CalibrationRef{"calib." + lname + ".bin", x.rows(), x.cols()};
    model.manifest.chain_input = CalibrationRef{"chain_input.bin", spec.hidden_dim, spec.samples};

    save_model(model, dir);
    for (const auto& [lname, x] : inputs)
        write_blob_f32(dir / model.manifest.calibration.at(lname).blob, x);
    write_blob_f32(dir / model.manifest.chain_input->blob, h0);
}

}  // namespace zipkit
