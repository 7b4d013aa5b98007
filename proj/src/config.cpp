// SPDX-License-Identifier: Apache-2.0
#include "dwf/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>
#include <type_traits>

#include "dwf/checkpoint.hpp"

namespace dwf {

using nlohmann::json;

namespace {

json training_to_json(const TrainingConfig& t, bool with_warmup) {
  json j{{"epochs", t.epochs},   {"batch_size", t.batch_size}, {"lr0", t.lr0},  {"momentum", t.momentum},
         {"weight_decay", t.weight_decay}, {"eta_min", t.eta_min}, {"t_max", t.t_max}};
  if (with_warmup) j["gate_warmup_epochs"] = t.gate_warmup_epochs;
  return j;
}

json layers_to_json(const std::vector<LayerSpec>& layers) {
  ModelSpec tmp;
  tmp.layers = layers;
  return spec_to_json(tmp)["layers"];
}

ExperimentConfig defaults() {
  ExperimentConfig c;
  c.expert_training.epochs = 10;
  c.expert_training.batch_size = 32;
  c.expert_training.lr0 = 0.02;
  c.moe_training.epochs = 3;
  c.moe_training.batch_size = 32;
  c.moe_training.lr0 = 0.01;
  return c;
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  return json{
      {"model",
       {{"preset", c.model_preset},
        {"layers", layers_to_json(c.layers)},
        {"normalization", c.normalization},
        {"mean", c.mean},
        {"std", c.std},
        {"experts", {{"benign", c.benign_experts}, {"fgsm", c.fgsm_experts}, {"pgd", c.pgd_experts}}}}},
      {"data",
       {{"source", c.data.source},
        {"train_size", c.data.train_size},
        {"test_size", c.data.test_size},
        {"classes", c.data.classes},
        {"side", c.data.side},
        {"synth_seed", c.data.synth_seed},
        {"cifar_classes", c.data.cifar_classes},
        {"train_per_class", c.data.train_per_class},
        {"test_per_class", c.data.test_per_class}}},
      {"attack",
       {{"epsilon", c.attack.epsilon},
        {"alpha", c.attack.alpha},
        {"iterations", c.attack.iterations},
        {"epsilon_grid", c.attack.epsilon_grid},
        {"iteration_grid", c.attack.iteration_grid},
        {"random_start", c.attack.random_start}}},
      {"training",
       {{"seed", c.seed},
        {"expert", training_to_json(c.expert_training, false)},
        {"moe", training_to_json(c.moe_training, true)}}},
      {"eval", {{"batch_size", c.eval.batch_size}, {"model_id", c.eval.model_id}}}};
}

json default_config_document() { return config_to_json(defaults()); }

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

namespace {

// Objects recurse; anything else (including arrays) is a leaf value.
void merge_checked(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) {
    throw std::invalid_argument("config" + (prefix.empty() ? std::string() : " key '" + prefix + "'") +
                                " must be an object");
  }
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw std::invalid_argument("unknown config key '" + path + "'");
    if (base[key].is_object()) merge_checked(base[key], value, path);
    else base[key] = value;
  }
}

template <typename T>
T get(const json& doc, const std::string& dotted) {
  const json* cur = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    cur = &cur->at(dotted.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!cur->is_number_unsigned()) {
      throw std::invalid_argument("config key '" + dotted + "': expected a non-negative integer, got " + cur->dump());
    }
  }
  try {
    return cur->get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config key '" + dotted + "': " + e.what());
  }
}

TrainingConfig parse_training(const json& doc, const std::string& section, std::uint64_t seed) {
  TrainingConfig t;
  t.epochs = get<std::size_t>(doc, section + ".epochs");
  t.batch_size = get<std::size_t>(doc, section + ".batch_size");
  t.lr0 = get<double>(doc, section + ".lr0");
  t.momentum = get<double>(doc, section + ".momentum");
  t.weight_decay = get<double>(doc, section + ".weight_decay");
  t.eta_min = get<double>(doc, section + ".eta_min");
  t.t_max = get<std::size_t>(doc, section + ".t_max");
  if (doc.at("training").at(section.substr(section.find('.') + 1)).contains("gate_warmup_epochs")) {
    t.gate_warmup_epochs = get<std::size_t>(doc, section + ".gate_warmup_epochs");
  }
  t.seed = seed;
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("config section '" + section + "': " + e.what());
  }
  return t;
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' must look like section.key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const std::size_t dot = rest.find('.', start);
    parts.push_back(rest.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  json checked = default_config_document();
  merge_checked(checked, patch, "");
  const json* probe = &checked;
  for (const std::string& p : parts) probe = &probe->at(p);
  if (probe->is_object()) throw std::invalid_argument("override '" + key + "' names a section, not a key");
  if (!doc.is_object()) doc = json::object();
  json* target = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!target->contains(parts[i]) || !(*target)[parts[i]].is_object()) (*target)[parts[i]] = json::object();
    target = &(*target)[parts[i]];
  }
  (*target)[parts.back()] = value;
}

ExperimentConfig parse_config(const json& user) {
  json doc = default_config_document();
  if (!user.is_null()) merge_checked(doc, user, "");
  ExperimentConfig c;
  c.model_preset = get<std::string>(doc, "model.preset");
  if (c.model_preset != "resnet-desk" && c.model_preset != "resnet-compact" && c.model_preset != "custom") {
    throw std::invalid_argument("config key 'model.preset': unknown preset '" + c.model_preset +
                                "' (resnet-desk, resnet-compact, custom)");
  }
  const json& layers = doc["model"]["layers"];
  if (!layers.is_array()) throw std::invalid_argument("config key 'model.layers' must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    c.layers.push_back(layer_from_json(layers[i], "config key 'model.layers[" + std::to_string(i) + "]'"));
  }
  if (c.model_preset == "custom" && c.layers.empty()) {
    throw std::invalid_argument("config key 'model.layers': preset 'custom' needs at least one layer");
  }
  c.normalization = get<std::string>(doc, "model.normalization");
  c.mean = get<std::vector<double>>(doc, "model.mean");
  c.std = get<std::vector<double>>(doc, "model.std");
  if (c.normalization != "default" && c.normalization != "cifar" && c.normalization != "empirical" &&
      c.normalization != "explicit") {
    throw std::invalid_argument("config key 'model.normalization': unknown value '" + c.normalization +
                                "' (default, cifar, empirical, explicit)");
  }
  if (c.normalization == "explicit" && (c.mean.empty() || c.mean.size() != c.std.size())) {
    throw std::invalid_argument("config keys 'model.mean'/'model.std': explicit normalization needs one value per channel");
  }
  c.benign_experts = get<std::size_t>(doc, "model.experts.benign");
  c.fgsm_experts = get<std::size_t>(doc, "model.experts.fgsm");
  c.pgd_experts = get<std::size_t>(doc, "model.experts.pgd");
  if (c.benign_experts + c.fgsm_experts + c.pgd_experts == 0) {
    throw std::invalid_argument("config key 'model.experts': at least one expert is required");
  }

  c.data.source = get<std::string>(doc, "data.source");
  c.data.train_size = get<std::size_t>(doc, "data.train_size");
  c.data.test_size = get<std::size_t>(doc, "data.test_size");
  c.data.classes = get<std::size_t>(doc, "data.classes");
  c.data.side = get<std::size_t>(doc, "data.side");
  c.data.synth_seed = get<std::uint64_t>(doc, "data.synth_seed");
  c.data.cifar_classes = get<std::vector<int>>(doc, "data.cifar_classes");
  c.data.train_per_class = get<std::size_t>(doc, "data.train_per_class");
  c.data.test_per_class = get<std::size_t>(doc, "data.test_per_class");

  c.attack.epsilon = get<double>(doc, "attack.epsilon");
  c.attack.alpha = get<double>(doc, "attack.alpha");
  c.attack.iterations = get<int>(doc, "attack.iterations");
  c.attack.epsilon_grid = get<std::vector<double>>(doc, "attack.epsilon_grid");
  c.attack.iteration_grid = get<std::vector<int>>(doc, "attack.iteration_grid");
  c.attack.random_start = get<bool>(doc, "attack.random_start");
  if (!(c.attack.epsilon >= 0.0)) throw std::invalid_argument("config key 'attack.epsilon' must be >= 0");
  if (!(c.attack.alpha > 0.0)) throw std::invalid_argument("config key 'attack.alpha' must be > 0");
  if (c.attack.iterations < 1) throw std::invalid_argument("config key 'attack.iterations' must be >= 1");
  if (c.attack.epsilon_grid.empty()) throw std::invalid_argument("config key 'attack.epsilon_grid' is empty");
  if (c.attack.iteration_grid.empty()) throw std::invalid_argument("config key 'attack.iteration_grid' is empty");
  for (double e : c.attack.epsilon_grid) {
    if (!(e >= 0.0)) throw std::invalid_argument("config key 'attack.epsilon_grid' has a negative value");
  }
  for (int it : c.attack.iteration_grid) {
    if (it < 1) throw std::invalid_argument("config key 'attack.iteration_grid' has a value below 1");
  }

  c.seed = get<std::uint64_t>(doc, "training.seed");
  c.expert_training = parse_training(doc, "training.expert", c.seed);
  c.moe_training = parse_training(doc, "training.moe", c.seed);
  c.expert_training.attack = c.attack;
  c.moe_training.attack = c.attack;

  c.eval.batch_size = get<std::size_t>(doc, "eval.batch_size");
  if (c.eval.batch_size == 0) throw std::invalid_argument("config key 'eval.batch_size' must be positive");
  c.eval.model_id = get<std::string>(doc, "eval.model_id");
  return c;
}

namespace {

// "synth:<kind>[:k=v,...]" → kind name, with DataConfig fields overridden.
std::string parse_synth_source(const std::string& source, DataConfig& cfg) {
  const std::string body = source.substr(6);
  const std::size_t colon = body.find(':');
  const std::string kind = body.substr(0, colon);
  if (colon == std::string::npos) return kind;
  const std::string opts = body.substr(colon + 1);
  std::size_t start = 0;
  while (start <= opts.size()) {
    const std::size_t comma = opts.find(',', start);
    const std::string item = opts.substr(start, comma - start);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("data source option '" + item + "' must be key=value");
    const std::string k = item.substr(0, eq);
    std::uint64_t v = 0;
    try {
      std::size_t used = 0;
      v = std::stoull(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("data source option '" + item + "' needs an unsigned integer");
    }
    if (k == "n") cfg.train_size = v;
    else if (k == "test") cfg.test_size = v;
    else if (k == "classes") cfg.classes = v;
    else if (k == "side") cfg.side = v;
    else if (k == "seed") cfg.synth_seed = v;
    else throw std::invalid_argument("unknown data source option '" + k + "' (n, test, classes, side, seed)");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return kind;
}

Dataset restrict(const Dataset& ds, const std::vector<int>& classes, std::size_t per_class, std::uint64_t seed) {
  std::map<int, std::size_t> have;
  for (int l : ds.labels) ++have[l];
  std::size_t n = per_class;
  if (n == 0) {
    n = ds.size();
    for (int c : classes) n = std::min(n, have[c]);
  }
  try {
    return subset(ds, classes, n, seed);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

}  // namespace

ExperimentData load_experiment_data(const DataConfig& in) {
  DataConfig cfg = in;
  ExperimentData out;
  if (cfg.source.rfind("synth:", 0) == 0) {
    const std::string kind_name = parse_synth_source(cfg.source, cfg);
    const SynthKind kind = parse_synth_kind(kind_name);
    out.train = synth_dataset(kind, cfg.train_size, cfg.classes, cfg.side, cfg.synth_seed);
    out.test = synth_dataset(kind, cfg.test_size, cfg.classes, cfg.side, derive_seed(cfg.synth_seed, "test"));
  } else {
    CifarSplit split = load_cifar10_split(cfg.source);
    out.train = std::move(split.train);
    out.test = std::move(split.test);
    if (!cfg.cifar_classes.empty()) {
      out.train = restrict(out.train, cfg.cifar_classes, cfg.train_per_class, derive_seed(cfg.synth_seed, "train"));
      out.test = restrict(out.test, cfg.cifar_classes, cfg.test_per_class, derive_seed(cfg.synth_seed, "test"));
    }
  }
  out.train.validate();
  out.test.validate();
  return out;
}

ModelSpec compact_backbone_spec(std::array<std::size_t, 3> input_shape, std::size_t num_classes,
                                std::vector<double> mean, std::vector<double> std) {
  ModelSpec spec;
  spec.input_shape = input_shape;
  spec.num_classes = num_classes;
  spec.mean = std::move(mean);
  spec.std = std::move(std);
  spec.layers = {LayerSpec::conv(8, 3, 1, 1), LayerSpec::relu(),    LayerSpec::residual(16, 2),
                 LayerSpec::avgpool(0),       LayerSpec::flatten(), LayerSpec::dense(num_classes)};
  return spec;
}

ModelSpec resolve_model_spec(const ExperimentConfig& cfg, const Dataset& train) {
  const Shape& s = train.images.shape();
  const std::array<std::size_t, 3> shape{s[1], s[2], s[3]};
  const bool cifar_data = cfg.data.source.rfind("synth:", 0) != 0;
  std::vector<double> mean, std;
  if (cfg.normalization == "explicit") {
    mean = cfg.mean;
    std = cfg.std;
  } else if (cfg.normalization == "cifar" || (cfg.normalization == "default" && cifar_data)) {
    mean.assign(kCifarMean.begin(), kCifarMean.end());
    std.assign(kCifarStd.begin(), kCifarStd.end());
  } else {
    channel_statistics(train, mean, std);
  }
  ModelSpec spec;
  if (cfg.model_preset == "resnet-desk") {
    spec = default_backbone_spec(shape, train.num_classes, mean, std);
  } else if (cfg.model_preset == "resnet-compact") {
    spec = compact_backbone_spec(shape, train.num_classes, mean, std);
  } else {
    spec.input_shape = shape;
    spec.num_classes = train.num_classes;
    spec.mean = mean;
    spec.std = std;
    spec.layers = cfg.layers;
  }
  infer_shapes(spec);
  return spec;
}

}  // namespace dwf
