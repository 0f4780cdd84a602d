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
#include "zipkit/model_store.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>
#include <set>
#include <sstream>

namespace zipkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

static_assert(sizeof(float) == 4, "binary32 blob layout requires 4-byte float");

void byteswap_if_big_endian(std::vector<float>& buf) {
    if constexpr (std::endian::native == std::endian::big) {
        for (float& f : buf) {
            auto* b = reinterpret_cast<unsigned char*>(&f);
            std::swap(b[0], b[3]);
            std::swap(b[1], b[2]);
        }
    }
}

json producer_to_json(const LinkedProducer& p) {
    json j;
    j["matrix"] = p.matrix;
    j["rows"] = p.rows;
    return j;
}

LinkedProducer producer_from_json(const json& j) {
    LinkedProducer p;
    p.matrix = j.at("matrix").get<std::string>();
    p.rows = j.at("rows").get<std::vector<Index>>();
    return p;
}

json group_to_json(const StructureGroup& g) {
    json j;
    j["target_matrix"] = g.target_matrix;
    j["kind"] = to_string(g.kind);
    j["structure_width"] = g.structure_width;
    j["structures"] = g.structures;
    if (g.linked_producer) j["linked_producer"] = producer_to_json(*g.linked_producer);
    return j;
}

StructureGroup group_from_json(const json& j) {
    StructureGroup g;
    g.target_matrix = j.at("target_matrix").get<std::string>();
    g.kind = group_kind_from_string(j.at("kind").get<std::string>());
    g.structure_width = j.at("structure_width").get<Index>();
    g.structures = j.at("structures").get<std::vector<std::vector<Index>>>();
    if (j.contains("linked_producer")) g.linked_producer = producer_from_json(j["linked_producer"]);
    return g;
}

json ref_to_json(const CalibrationRef& r) {
    return json{{"blob", r.blob}, {"rows", r.rows}, {"cols", r.cols}};
}

CalibrationRef ref_from_json(const json& j) {
    CalibrationRef r;
    r.blob = j.at("blob").get<std::string>();
    r.rows = j.at("rows").get<Index>();
    r.cols = j.at("cols").get<Index>();
    return r;
}

json manifest_to_json(const ModelManifest& m) {
    json j;
    j["format_version"] = m.format_version;
    j["hidden_dim"] = m.hidden_dim;
    if (!m.metadata.empty()) j["metadata"] = m.metadata;
    j["layers"] = json::array();
    for (const LayerSpec& layer : m.layers) {
        json jl;
        jl["name"] = layer.name;
        jl["matrices"] = json::array();
        for (const MatrixRecord& rec : layer.matrices) {
            jl["matrices"].push_back(
                json{{"name", rec.name}, {"rows", rec.rows}, {"cols", rec.cols}, {"blob", rec.blob}});
        }
        if (!layer.groups.empty()) {
            jl["groups"] = json::array();
            for (const StructureGroup& g : layer.groups) jl["groups"].push_back(group_to_json(g));
        }
        j["layers"].push_back(std::move(jl));
    }
    if (!m.calibration.empty()) {
        json jc;
        for (const auto& [name, ref] : m.calibration) jc[name] = ref_to_json(ref);
        j["calibration"] = std::move(jc);
    }
    if (m.chain_input) j["chain_input"] = ref_to_json(*m.chain_input);
    return j;
}

ModelManifest manifest_from_json(const json& j) {
    ModelManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kFormatVersion) {
        throw InputError("manifest format version mismatch: expected " +
                         std::to_string(kFormatVersion) + ", got " +
                         std::to_string(m.format_version));
    }
    m.hidden_dim = j.at("hidden_dim").get<Index>();
    if (j.contains("metadata"))
        m.metadata = j["metadata"].get<std::map<std::string, std::string>>();
    for (const json& jl : j.at("layers")) {
        LayerSpec layer;
        layer.name = jl.at("name").get<std::string>();
        for (const json& jm : jl.at("matrices")) {
            MatrixRecord rec;
            rec.name = jm.at("name").get<std::string>();
            rec.rows = jm.at("rows").get<Index>();
            rec.cols = jm.at("cols").get<Index>();
            rec.blob = jm.at("blob").get<std::string>();
            layer.matrices.push_back(std::move(rec));
        }
        if (jl.contains("groups"))
            for (const json& jg : jl["groups"]) layer.groups.push_back(group_from_json(jg));
        m.layers.push_back(std::move(layer));
    }
    if (j.contains("calibration"))
        for (const auto& [name, jr] : j["calibration"].items()) m.calibration[name] = ref_from_json(jr);
    if (j.contains("chain_input")) m.chain_input = ref_from_json(j["chain_input"]);
    return m;
}

const MatrixRecord* find_matrix_global(const ModelManifest& m, const std::string& name) {
    for (const LayerSpec& layer : m.layers)
        if (const MatrixRecord* rec = layer.find_matrix(name)) return rec;
    return nullptr;
}

/// The matrix whose columns a layer's groups prune; null for group-less layers.
const MatrixRecord* layer_target(const ModelManifest& m, const LayerSpec& layer) {
    if (layer.groups.empty()) return nullptr;
    return find_matrix_global(m, layer.groups.front().target_matrix);
}

}  // namespace

std::vector<Index> StructureGroup::covered_columns() const {
    std::vector<Index> cols;
    for (const auto& s : structures) cols.insert(cols.end(), s.begin(), s.end());
    std::sort(cols.begin(), cols.end());
    return cols;
}

const MatrixRecord* LayerSpec::find_matrix(const std::string& name) const {
    for (const MatrixRecord& rec : matrices)
        if (rec.name == name) return &rec;
    return nullptr;
}

const LayerSpec* ModelManifest::find_layer(const std::string& name) const {
    for (const LayerSpec& layer : layers)
        if (layer.name == name) return &layer;
    return nullptr;
}

const Matrix& Model::matrix(const std::string& name) const {
    auto it = matrices.find(name);
    if (it == matrices.end()) throw InputError("unknown matrix: '" + name + "'");
    return it->second;
}

void CalibrationSet::truncate(Index n) {
    if (n < 1) throw InputError("calibration sample budget must be >= 1");
    if (n >= sample_count) return;
    for (auto& [name, x] : inputs) x = x.leftCols(n).eval();
    sample_count = n;
}

Matrix read_blob_f32(const fs::path& path, Index rows, Index cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("missing blob: " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(in.tellg());
    const auto expected = static_cast<std::uint64_t>(rows) * cols * 4;
    if (size != expected) {
        throw InputError("blob shape mismatch: " + path.string() + " holds " +
                         std::to_string(size) + " bytes, declared " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " needs " + std::to_string(expected));
    }
    in.seekg(0, std::ios::beg);
    std::vector<float> buf(static_cast<std::size_t>(rows * cols));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    if (!in) throw InputError("short read on blob: " + path.string());
    byteswap_if_big_endian(buf);
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajorF>(buf.data(), rows, cols).cast<double>();
}

void write_blob_f32(const fs::path& path, const Matrix& m) {
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajorF f = m.cast<float>();
    std::vector<float> buf(f.data(), f.data() + f.size());
    byteswap_if_big_endian(buf);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("unwritable destination: " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw InputError("write failed: " + path.string());
}

void validate_manifest(const ModelManifest& manifest) {
    if (manifest.hidden_dim <= 0) throw InputError("hidden_dim must be positive");
    std::set<std::string> layer_names;
    std::set<std::string> matrix_names;
    for (const LayerSpec& layer : manifest.layers) {
        if (!layer_names.insert(layer.name).second)
            throw InputError("duplicate layer name: '" + layer.name + "'");
        for (const MatrixRecord& rec : layer.matrices) {
            if (rec.rows <= 0 || rec.cols <= 0)
                throw InputError("matrix '" + rec.name + "' has non-positive shape");
            if (!matrix_names.insert(rec.name).second)
                throw InputError("duplicate matrix name: '" + rec.name + "'");
        }
        const std::string* shared_target = nullptr;
        for (const StructureGroup& g : layer.groups) {
            const MatrixRecord* target = find_matrix_global(manifest, g.target_matrix);
            if (!target)
                throw InputError("layer '" + layer.name + "': group target matrix '" +
                                 g.target_matrix + "' not found");
            if (shared_target && *shared_target != g.target_matrix)
                throw InputError("layer '" + layer.name +
                                 "': groups must share one target matrix");
            shared_target = &g.target_matrix;
            if (g.structure_width <= 0)
                throw InputError("layer '" + layer.name + "': structure_width must be positive");
            std::set<Index> seen;
            for (const auto& s : g.structures) {
                if (static_cast<Index>(s.size()) != g.structure_width)
                    throw InputError("layer '" + layer.name +
                                     "': structure size differs from structure_width");
                for (Index c : s) {
                    if (c < 0 || c >= target->cols)
                        throw InputError("layer '" + layer.name + "': structure column " +
                                         std::to_string(c) + " out of range");
                    if (!seen.insert(c).second)
                        throw InputError("layer '" + layer.name +
                                         "': structures overlap at column " + std::to_string(c));
                }
            }
            if (g.linked_producer) {
                const LinkedProducer& p = *g.linked_producer;
                const MatrixRecord* prod = find_matrix_global(manifest, p.matrix);
                if (!prod)
                    throw InputError("layer '" + layer.name + "': linked producer matrix '" +
                                     p.matrix + "' not found");
                if (static_cast<Index>(p.rows.size()) != target->cols)
                    throw InputError("layer '" + layer.name +
                                     "': linked producer row map must have one entry per "
                                     "target column");
                std::set<Index> used;
                for (Index c : seen) {
                    const Index r = p.rows[static_cast<std::size_t>(c)];
                    if (r < 0 || r >= prod->rows)
                        throw InputError("layer '" + layer.name +
                                         "': linked producer row out of range for column " +
                                         std::to_string(c));
                    if (!used.insert(r).second)
                        throw InputError("layer '" + layer.name +
                                         "': linked producer rows not injective");
                }
            }
        }
    }
    for (const auto& [lname, ref] : manifest.calibration) {
        const LayerSpec* layer = manifest.find_layer(lname);
        if (!layer) throw InputError("calibration entry for unknown layer '" + lname + "'");
        if (ref.cols < 1) throw InputError("calibration for '" + lname + "' has no samples");
        if (const MatrixRecord* target = layer_target(manifest, *layer)) {
            if (ref.rows != target->cols)
                throw InputError("calibration for '" + lname + "' has " +
                                 std::to_string(ref.rows) + " rows; target matrix '" +
                                 target->name + "' has " + std::to_string(target->cols) +
                                 " columns");
        }
    }
}

Model load_model(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw InputError("cannot open manifest: " + manifest_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("manifest parse error in " + manifest_path.string() + ": " + e.what());
    }
    Model model;
    try {
        model.manifest = manifest_from_json(j);
    } catch (const json::exception& e) {
        throw InputError("manifest field error in " + manifest_path.string() + ": " + e.what());
    }
    validate_manifest(model.manifest);
    for (const LayerSpec& layer : model.manifest.layers)
        for (const MatrixRecord& rec : layer.matrices)
            model.matrices[rec.name] = read_blob_f32(dir / rec.blob, rec.rows, rec.cols);
    return model;
}

void save_model(const Model& model, const fs::path& dir) {
    validate_manifest(model.manifest);
    std::error_code ec;
    fs::create_directories(dir, ec);
    for (const LayerSpec& layer : model.manifest.layers) {
        for (const MatrixRecord& rec : layer.matrices) {
            auto it = model.matrices.find(rec.name);
            if (it == model.matrices.end())
                throw InputError("matrix '" + rec.name + "' declared but not supplied");
            if (it->second.rows() != rec.rows || it->second.cols() != rec.cols)
                throw InputError("matrix '" + rec.name + "' shape differs from declaration");
            write_blob_f32(dir / rec.blob, it->second);
        }
    }
    const fs::path manifest_path = dir / "manifest.json";
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw InputError("unwritable destination: " + manifest_path.string());
    out << manifest_to_json(model.manifest).dump(2) << "\n";
    if (!out) throw InputError("write failed: " + manifest_path.string());
}

CalibrationSet load_calibration(const fs::path& dir, const Model& model) {
    const ModelManifest& m = model.manifest;
    if (m.calibration.empty()) throw InputError("model has no calibration section");
    CalibrationSet set;
    Index samples = -1;
    for (const auto& [lname, ref] : m.calibration) {
        Matrix x = read_blob_f32(dir / ref.blob, ref.rows, ref.cols);
        if (samples < 0) samples = x.cols();
        if (x.cols() != samples)
            throw InputError("calibration sample counts differ across layers");
        set.inputs[lname] = std::move(x);
    }
    set.sample_count = samples;
    return set;
}

}  // namespace zipkit
