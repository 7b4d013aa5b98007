// SPDX-License-Identifier: Apache-2.0
#include "dwf/nn.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

#include "dwf/common.hpp"
#include "dwf/kernels.hpp"
#include "dwf/ops.hpp"

namespace dwf {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::residual: return "residual";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::conv2d, LayerKind::dense, LayerKind::relu, LayerKind::residual, LayerKind::avgpool,
                      LayerKind::flatten}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return {LayerKind::conv2d, out, kernel, stride, padding};
}
LayerSpec LayerSpec::dense(std::size_t out) { return {LayerKind::dense, out, 0, 1, 0}; }
LayerSpec LayerSpec::relu() { return {LayerKind::relu, 0, 0, 1, 0}; }
LayerSpec LayerSpec::residual(std::size_t out, std::size_t stride) { return {LayerKind::residual, out, 3, stride, 1}; }
LayerSpec LayerSpec::avgpool(std::size_t window) { return {LayerKind::avgpool, 0, window, 1, 0}; }
LayerSpec LayerSpec::flatten() { return {LayerKind::flatten, 0, 0, 1, 0}; }

ModelSpec default_backbone_spec(std::array<std::size_t, 3> input_shape, std::size_t num_classes,
                                std::vector<double> mean, std::vector<double> std) {
  ModelSpec spec;
  spec.input_shape = input_shape;
  spec.num_classes = num_classes;
  spec.mean = std::move(mean);
  spec.std = std::move(std);
  spec.layers = {LayerSpec::conv(16, 3, 1, 1), LayerSpec::relu(),     LayerSpec::residual(32, 2),
                 LayerSpec::residual(64, 2),   LayerSpec::avgpool(0), LayerSpec::flatten(),
                 LayerSpec::dense(num_classes)};
  return spec;
}

namespace {

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

std::string layer_label(const ModelSpec& spec, std::size_t i) {
  if (i == 0) return "input";
  return std::string(to_string(spec.layers[i - 1].kind)) + " (layer " + std::to_string(i - 1) + ")";
}

[[noreturn]] void chain_error(const ModelSpec& spec, std::size_t i, const std::string& why) {
  throw std::invalid_argument("incompatible layer chain: " + layer_label(spec, i) + " -> " +
                              std::string(to_string(spec.layers[i].kind)) + " (layer " + std::to_string(i) +
                              "): " + why);
}

bool needs_projection(const Shape& in, const LayerSpec& layer) { return in[0] != layer.out || layer.stride != 1; }

}  // namespace

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  const auto [c, h, w] = spec.input_shape;
  if (c == 0 || h == 0 || w == 0) throw std::invalid_argument("model input shape must be positive");
  if (spec.num_classes == 0) throw std::invalid_argument("num_classes must be positive");
  if (spec.mean.size() != c || spec.std.size() != c) {
    throw std::invalid_argument("normalization needs " + std::to_string(c) + " channel statistics");
  }
  for (double s : spec.std) {
    if (!(s > 0.0)) throw std::invalid_argument("normalization std must be positive for every channel");
  }
  std::vector<Shape> shapes;
  Shape cur{c, h, w};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::residual: {
        if (cur.size() != 3) chain_error(spec, i, "expects [C,H,W] input, got " + to_string(cur));
        if (l.out == 0 || l.stride == 0 || l.kernel == 0) chain_error(spec, i, "out, kernel and stride must be positive");
        if (l.kernel > cur[1] + 2 * l.padding || l.kernel > cur[2] + 2 * l.padding) {
          chain_error(spec, i, "kernel exceeds padded input " + to_string(cur));
        }
        cur = {l.out, conv_out(cur[1], l.kernel, l.stride, l.padding), conv_out(cur[2], l.kernel, l.stride, l.padding)};
        break;
      }
      case LayerKind::dense:
        if (cur.size() != 1) chain_error(spec, i, "expects a flat input, got " + to_string(cur));
        if (l.out == 0) chain_error(spec, i, "out must be positive");
        cur = {l.out};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::avgpool:
        if (cur.size() != 3) chain_error(spec, i, "expects [C,H,W] input, got " + to_string(cur));
        if (l.kernel == 0) {
          cur = {cur[0], 1, 1};
        } else {
          if (l.kernel > cur[1] || l.kernel > cur[2]) chain_error(spec, i, "window exceeds input " + to_string(cur));
          cur = {cur[0], cur[1] / l.kernel, cur[2] / l.kernel};
        }
        break;
      case LayerKind::flatten:
        cur = {shape_size(cur)};
        break;
    }
    shapes.push_back(cur);
  }
  if (cur != Shape{spec.num_classes}) {
    throw std::invalid_argument("model output " + to_string(cur) + " does not match [" +
                                std::to_string(spec.num_classes) + "] logits");
  }
  return shapes;
}

namespace {

struct ParamShape {
  std::string name;
  Shape shape;
  std::size_t fan_in;  // 0 marks a bias
};

std::vector<ParamShape> parameter_layout(const ModelSpec& spec) {
  const std::vector<Shape> shapes = infer_shapes(spec);
  std::vector<ParamShape> out;
  Shape in{spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k) {
    out.push_back({prefix + ".weight", {cout, cin, k, k}, cin * k * k});
    out.push_back({prefix + ".bias", {cout}, 0});
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string prefix = "layers." + std::to_string(i);
    switch (l.kind) {
      case LayerKind::conv2d:
        conv(prefix, in[0], l.out, l.kernel);
        break;
      case LayerKind::residual:
        conv(prefix + ".conv1", in[0], l.out, 3);
        conv(prefix + ".conv2", l.out, l.out, 3);
        if (needs_projection(in, l)) conv(prefix + ".shortcut", in[0], l.out, 1);
        break;
      case LayerKind::dense:
        out.push_back({prefix + ".weight", {in[0], l.out}, in[0]});
        out.push_back({prefix + ".bias", {l.out}, 0});
        break;
      default:
        break;
    }
    in = shapes[i];
  }
  return out;
}

}  // namespace

std::size_t count_parameters(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const ParamShape& p : parameter_layout(spec)) n += shape_size(p.shape);
  return n;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Parameter> params;
  for (const ParamShape& p : parameter_layout(spec)) {
    Tensor t(p.shape, 0.0);
    if (p.fan_in > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
    }
    params.push_back({p.name, std::move(t)});
  }
  return Model(spec, std::move(params));
}

Var ParamBinding::bind(const std::string& name, const Tensor& value) {
  Var v = Var::leaf(value, true);
  vars_.emplace_back(name, v);
  return v;
}

std::map<std::string, Tensor> ParamBinding::collect(const Gradients& grads) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : vars_) {
    auto [it, inserted] = out.try_emplace(name, var.shape(), 0.0);
    if (grads.contains(var)) {
      const Tensor& g = grads.at(var);
      kernels::active().axpy(g.size(), 1.0, g.raw(), it->second.raw());
    }
  }
  return out;
}

Model::Model(ModelSpec spec, std::vector<Parameter> params) : spec_(std::move(spec)), params_(std::move(params)) {
  std::map<std::string, Shape> expected;
  for (const ParamShape& p : parameter_layout(spec_)) expected.emplace(p.name, p.shape);
  if (expected.size() != params_.size()) {
    throw std::invalid_argument("model expects " + std::to_string(expected.size()) + " parameter tensors, got " +
                                std::to_string(params_.size()));
  }
  for (const Parameter& p : params_) {
    auto it = expected.find(p.name);
    if (it == expected.end()) throw std::invalid_argument("unexpected parameter '" + p.name + "'");
    if (it->second != p.value.shape()) {
      throw std::invalid_argument("parameter '" + p.name + "' has shape " + to_string(p.value.shape()) +
                                  ", expected " + to_string(it->second));
    }
  }
}

const Parameter& Model::parameter(std::string_view name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("no parameter named '" + std::string(name) + "'");
}

Parameter& Model::parameter(std::string_view name) {
  return const_cast<Parameter&>(static_cast<const Model&>(*this).parameter(name));
}

std::vector<ParamRef> Model::parameters() { return parameters_scoped(""); }

std::vector<ConstParamRef> Model::parameters() const { return parameters_scoped(""); }

std::vector<ParamRef> Model::parameters_scoped(const std::string& prefix) {
  std::vector<ParamRef> out;
  for (Parameter& p : params_) out.push_back({prefix + p.name, &p.value});
  return out;
}

std::vector<ConstParamRef> Model::parameters_scoped(const std::string& prefix) const {
  std::vector<ConstParamRef> out;
  for (const Parameter& p : params_) out.push_back({prefix + p.name, &p.value});
  return out;
}

Var Model::forward(const Var& x, ParamBinding* binding) const { return forward_scoped(x, binding, ""); }

Var Model::forward_scoped(const Var& x, ParamBinding* binding, const std::string& prefix) const {
  const auto [c, h, w] = spec_.input_shape;
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != c || xs[2] != h || xs[3] != w) {
    throw std::invalid_argument("model expects input [N," + std::to_string(c) + "," + std::to_string(h) + "," +
                                std::to_string(w) + "], got " + to_string(xs));
  }
  auto param = [&](const std::string& name) {
    const Tensor& value = parameter(name).value;
    return binding ? binding->bind(prefix + name, value) : Var::leaf(value);
  };
  auto conv = [&](const Var& in, const std::string& name, std::size_t stride, std::size_t padding) {
    return ops::bias_add(ops::conv2d(in, param(name + ".weight"), stride, padding), param(name + ".bias"));
  };

  Var cur = ops::normalize_channels(x, spec_.mean, spec_.std);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const std::string name = "layers." + std::to_string(i);
    switch (l.kind) {
      case LayerKind::conv2d:
        cur = conv(cur, name, l.stride, l.padding);
        break;
      case LayerKind::residual: {
        const Shape in_shape(cur.shape().begin() + 1, cur.shape().end());
        Var branch = ops::relu(conv(cur, name + ".conv1", l.stride, 1));
        branch = conv(branch, name + ".conv2", 1, 1);
        const Var skip = needs_projection(in_shape, l) ? conv(cur, name + ".shortcut", l.stride, 0) : cur;
        cur = ops::relu(ops::add(branch, skip));
        break;
      }
      case LayerKind::dense:
        cur = ops::bias_add(ops::matmul(cur, param(name + ".weight")), param(name + ".bias"));
        break;
      case LayerKind::relu:
        cur = ops::relu(cur);
        break;
      case LayerKind::avgpool:
        cur = ops::avg_pool2d(cur, l.kernel);
        break;
      case LayerKind::flatten: {
        const std::size_t n = cur.shape()[0];
        cur = ops::reshape(cur, Shape{n, cur.value().size() / n});
        break;
      }
    }
  }
  return cur;
}

std::uint64_t parameter_checksum(const Classifier& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const ConstParamRef& p : model.parameters()) {
    for (unsigned char ch : p.name) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    h = splitmix64(h ^ checksum(*p.value));
  }
  return h;
}

void sgd_step(const std::vector<ParamRef>& params, const std::map<std::string, Tensor>& grads,
              OptimizerState& state) {
  for (const ParamRef& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) {
      throw std::invalid_argument("sgd_step: missing gradient for trainable parameter '" + p.name + "'");
    }
    if (it->second.shape() != p.value->shape()) {
      throw std::invalid_argument("sgd_step: gradient for '" + p.name + "' has shape " +
                                  to_string(it->second.shape()) + ", parameter has " + to_string(p.value->shape()));
    }
  }
  for (const ParamRef& p : params) {
    const Tensor& g = grads.at(p.name);
    auto [it, inserted] = state.velocity.try_emplace(p.name, p.value->shape(), 0.0);
    kernels::active().sgd_update(p.value->size(), p.value->raw(), g.raw(), it->second.raw(), state.lr,
                                 state.momentum, state.weight_decay);
  }
}

void sgd_step(Classifier& model, const std::map<std::string, Tensor>& grads, OptimizerState& state) {
  sgd_step(model.parameters(), grads, state);
}

double cosine_lr(std::size_t t, const LrSchedule& sched) {
  if (sched.t_max < 1) throw std::invalid_argument("cosine_lr: t_max must be at least 1");
  if (!(sched.eta_min >= 0.0 && sched.eta_min <= sched.lr0)) {
    throw std::invalid_argument("cosine_lr: requires 0 <= eta_min <= lr0");
  }
  if (t > sched.t_max) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      std::clog << "cosine_lr: step " << t << " past t_max " << sched.t_max << ", holding at eta_min\n";
    }
    return sched.eta_min;
  }
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(sched.t_max);
  return sched.eta_min + 0.5 * (sched.lr0 - sched.eta_min) * (1.0 + std::cos(phase));
}

}  // namespace dwf
