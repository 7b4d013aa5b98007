// SPDX-License-Identifier: Apache-2.0
#include "dwf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace dwf {

using nlohmann::json;
namespace fs = std::filesystem;

json spec_to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const LayerSpec& l : spec.layers) {
    json j{{"kind", std::string(to_string(l.kind))}};
    switch (l.kind) {
      case LayerKind::conv2d:
        j["out"] = l.out;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["padding"] = l.padding;
        break;
      case LayerKind::residual:
        j["out"] = l.out;
        j["stride"] = l.stride;
        break;
      case LayerKind::dense: j["out"] = l.out; break;
      case LayerKind::avgpool: j["window"] = l.kernel; break;
      case LayerKind::relu:
      case LayerKind::flatten: break;
    }
    layers.push_back(std::move(j));
  }
  return json{{"input_shape", spec.input_shape},
              {"num_classes", spec.num_classes},
              {"mean", spec.mean},
              {"std", spec.std},
              {"layers", std::move(layers)}};
}

namespace {

template <typename T>
T field(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw std::invalid_argument(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(where + ": bad '" + key + "' (" + e.what() + ")");
  }
}

template <typename T>
T field_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  return j.contains(key) ? field<T>(j, key, where) : fallback;
}

}  // namespace

LayerSpec layer_from_json(const json& lj, const std::string& where) {
  switch (parse_layer_kind(field<std::string>(lj, "kind", where))) {
    case LayerKind::conv2d:
      return LayerSpec::conv(field<std::size_t>(lj, "out", where), field_or<std::size_t>(lj, "kernel", 3, where),
                             field_or<std::size_t>(lj, "stride", 1, where),
                             field_or<std::size_t>(lj, "padding", 0, where));
    case LayerKind::residual:
      return LayerSpec::residual(field<std::size_t>(lj, "out", where), field_or<std::size_t>(lj, "stride", 1, where));
    case LayerKind::dense: return LayerSpec::dense(field<std::size_t>(lj, "out", where));
    case LayerKind::avgpool: return LayerSpec::avgpool(field_or<std::size_t>(lj, "window", 0, where));
    case LayerKind::relu: return LayerSpec::relu();
    case LayerKind::flatten: return LayerSpec::flatten();
  }
  throw std::invalid_argument(where + ": unsupported layer kind");
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.input_shape = field<std::array<std::size_t, 3>>(j, "input_shape", "model spec");
  spec.num_classes = field<std::size_t>(j, "num_classes", "model spec");
  spec.mean = field<std::vector<double>>(j, "mean", "model spec");
  spec.std = field<std::vector<double>>(j, "std", "model spec");
  const json layers = field<json>(j, "layers", "model spec");
  if (!layers.is_array()) throw std::invalid_argument("model spec: 'layers' must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    spec.layers.push_back(layer_from_json(layers[i], "model spec layers[" + std::to_string(i) + "]"));
  }
  infer_shapes(spec);
  return spec;
}

namespace {

void write_f32(std::ostream& out, const Tensor& t) {
  std::vector<char> buf(4 * t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t[i]));
    for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_f32(const std::vector<unsigned char>& payload, std::size_t offset, Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[offset + 4 * i + b]) << (8 * b);
    t[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
}

void write_checkpoint(json manifest, const std::vector<ConstParamRef>& params, const fs::path& dir) {
  fs::create_directories(dir);
  json index = json::array();
  std::size_t offset = 0;
  std::ofstream payload(dir / "payload.bin", std::ios::binary | std::ios::trunc);
  if (!payload) throw std::runtime_error("cannot write " + (dir / "payload.bin").string());
  for (const ConstParamRef& p : params) {
    const std::size_t bytes = 4 * p.value->size();
    index.push_back({{"name", p.name}, {"shape", p.value->shape()}, {"offset", offset}, {"bytes", bytes}});
    write_f32(payload, *p.value);
    offset += bytes;
  }
  payload.close();
  if (!payload) throw std::runtime_error("failed writing " + (dir / "payload.bin").string());
  manifest["payload_bytes"] = offset;
  manifest["tensors"] = std::move(index);
  std::ofstream m(dir / "manifest.json", std::ios::trunc);
  if (!m) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  m << manifest.dump(2) << '\n';
  if (!m) throw std::runtime_error("failed writing " + (dir / "manifest.json").string());
}

json base_manifest(const std::string& kind, Mode mode, const CheckpointMetadata& meta) {
  return json{{"format_version", kCheckpointVersion},
              {"kind", kind},
              {"mode", mode == Mode::eval ? "eval" : "train"},
              {"metadata", meta.is_null() ? json::object() : meta}};
}

}  // namespace

void save_checkpoint(const Model& model, const fs::path& dir, const CheckpointMetadata& meta) {
  json m = base_manifest("model", model.mode(), meta);
  m["model"] = spec_to_json(model.spec());
  write_checkpoint(std::move(m), model.parameters(), dir);
}

void save_checkpoint(const MixtureOfExperts& moe, const fs::path& dir, const CheckpointMetadata& meta) {
  if (!moe.assembled()) throw std::invalid_argument("save_checkpoint: mixture is not assembled");
  json m = base_manifest("moe", moe.gate().model().mode(), meta);
  json experts = json::array(), roles = json::array();
  for (std::size_t i = 0; i < moe.size(); ++i) {
    experts.push_back(spec_to_json(moe.experts()[i].spec()));
    roles.push_back(to_string(moe.roles()[i]));
  }
  m["experts"] = std::move(experts);
  m["roles"] = std::move(roles);
  m["gate"] = spec_to_json(moe.gate().model().spec());
  write_checkpoint(std::move(m), moe.parameters(), dir);
}

Classifier& LoadedCheckpoint::classifier() {
  return std::visit([](auto& obj) -> Classifier& { return obj; }, object);
}

const Classifier& LoadedCheckpoint::classifier() const {
  return std::visit([](const auto& obj) -> const Classifier& { return obj; }, object);
}

namespace {

[[noreturn]] void corrupt(const std::string& field, const std::string& detail) {
  throw DataError("checkpoint field '" + field + "': " + detail);
}

template <typename T>
T manifest_field(const json& j, const std::string& key) {
  if (!j.contains(key)) corrupt(key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    corrupt(key, e.what());
  }
}

ModelSpec manifest_spec(const json& j, const std::string& key) {
  try {
    return spec_from_json(manifest_field<json>(j, key));
  } catch (const std::invalid_argument& e) {
    corrupt(key, e.what());
  }
}

void fill_parameters(const json& manifest, const std::vector<unsigned char>& payload, std::vector<ParamRef> params) {
  const auto total = manifest_field<std::size_t>(manifest, "payload_bytes");
  if (total != payload.size()) {
    corrupt("payload_bytes", "manifest says " + std::to_string(total) + " bytes, payload.bin has " +
                                 std::to_string(payload.size()));
  }
  const json index = manifest_field<json>(manifest, "tensors");
  if (!index.is_array() || index.size() != params.size()) {
    corrupt("tensors", "expected " + std::to_string(params.size()) + " entries for this spec, found " +
                           std::to_string(index.is_array() ? index.size() : 0));
  }
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& e = index[i];
    const std::string where = "tensors[" + std::to_string(i) + "]";
    const auto name = manifest_field<std::string>(e, "name");
    if (name != params[i].name) corrupt(where + ".name", "'" + name + "', spec expects '" + params[i].name + "'");
    const auto shape = manifest_field<Shape>(e, "shape");
    if (shape != params[i].value->shape()) {
      corrupt(where + ".shape", to_string(shape) + ", spec expects " + to_string(params[i].value->shape()));
    }
    const auto offset = manifest_field<std::size_t>(e, "offset");
    if (offset != expected_offset) {
      corrupt(where + ".offset", std::to_string(offset) + ", expected " + std::to_string(expected_offset));
    }
    const auto bytes = manifest_field<std::size_t>(e, "bytes");
    if (bytes != 4 * shape_size(shape)) {
      corrupt(where + ".bytes", std::to_string(bytes) + " does not match shape " + to_string(shape));
    }
    if (offset + bytes > payload.size()) corrupt(where + ".offset", "runs past the end of the payload");
    read_f32(payload, offset, *params[i].value);
    expected_offset += bytes;
  }
  if (expected_offset != payload.size()) {
    corrupt("tensors", "entries cover " + std::to_string(expected_offset) + " of " + std::to_string(payload.size()) +
                           " payload bytes");
  }
}

Mode parse_mode(const json& manifest) {
  const std::string m = manifest.value("mode", "eval");
  if (m == "eval") return Mode::eval;
  if (m == "train") return Mode::train;
  corrupt("mode", "unknown value '" + m + "'");
}

}  // namespace

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw DataError("cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw DataError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
  const auto version = manifest_field<int>(manifest, "format_version");
  if (version != kCheckpointVersion) {
    corrupt("format_version", std::to_string(version) + " is not supported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
  }
  std::ifstream pf(dir / "payload.bin", std::ios::binary);
  if (!pf) throw DataError("cannot open " + (dir / "payload.bin").string());
  const std::vector<unsigned char> payload((std::istreambuf_iterator<char>(pf)), std::istreambuf_iterator<char>());
  const Mode mode = parse_mode(manifest);
  CheckpointMetadata meta = manifest.value("metadata", json::object());

  const auto kind = manifest_field<std::string>(manifest, "kind");
  if (kind == "model") {
    Model model = build_model(manifest_spec(manifest, "model"), 0);
    fill_parameters(manifest, payload, model.parameters());
    model.set_mode(mode);
    return {std::move(model), std::move(meta)};
  }
  if (kind == "moe") {
    const json specs = manifest_field<json>(manifest, "experts");
    const auto role_names = manifest_field<std::vector<std::string>>(manifest, "roles");
    if (!specs.is_array() || specs.size() != role_names.size()) corrupt("roles", "count differs from 'experts'");
    std::vector<Model> experts;
    std::vector<ExpertRole> roles;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      try {
        experts.push_back(build_model(spec_from_json(specs[i]), 0));
      } catch (const std::invalid_argument& e) {
        corrupt("experts[" + std::to_string(i) + "]", e.what());
      }
      try {
        roles.push_back(parse_expert_role(role_names[i]));
      } catch (const std::invalid_argument& e) {
        corrupt("roles[" + std::to_string(i) + "]", e.what());
      }
    }
    GatingNetwork gate(build_model(manifest_spec(manifest, "gate"), 0));
    MixtureOfExperts moe;
    try {
      moe = MixtureOfExperts(std::move(experts), std::move(roles), std::move(gate));
    } catch (const std::invalid_argument& e) {
      corrupt("experts", e.what());
    }
    fill_parameters(manifest, payload, moe.parameters());
    moe.set_mode(mode);
    return {std::move(moe), std::move(meta)};
  }
  corrupt("kind", "unknown value '" + kind + "'");
}

Model load_model(const fs::path& dir) {
  LoadedCheckpoint c = load_checkpoint(dir);
  if (c.is_moe()) throw DataError("checkpoint field 'kind': expected a single model, found a mixture");
  return std::get<Model>(std::move(c.object));
}

MixtureOfExperts load_moe(const fs::path& dir) {
  LoadedCheckpoint c = load_checkpoint(dir);
  if (!c.is_moe()) throw DataError("checkpoint field 'kind': expected a mixture, found a single model");
  return std::get<MixtureOfExperts>(std::move(c.object));
}

}  // namespace dwf
