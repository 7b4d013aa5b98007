// SPDX-License-Identifier: Apache-2.0
#include "dwf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <unordered_set>

#include "dwf/ops.hpp"

namespace dwf {

namespace {

double eval_scalar(const ScalarFunction& f, const Tensor& x) {
  const Var out = f(Var::leaf(x));
  if (out.value().size() != 1) {
    throw std::invalid_argument("finite_difference_check: function output has shape " + to_string(out.shape()));
  }
  return out.value()[0];
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Folds one coordinate into the running worst case.
void record(GradCheckResult& r, const std::string& tensor, std::size_t index, double analytic, double numeric) {
  const double err = rel_error(analytic, numeric);
  if (r.coordinates == 0 || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_index = index;
    r.analytic = analytic;
    r.numeric = numeric;
    r.worst_tensor = tensor;
  }
  ++r.coordinates;
}

}  // namespace

GradCheckResult finite_difference_check(const ScalarFunction& f, const Tensor& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  const Var x = Var::leaf(point, true);
  const Var out = f(x);
  if (out.value().size() != 1) {
    throw std::invalid_argument("finite_difference_check: function output has shape " + to_string(out.shape()));
  }
  const Gradients grads = backward(out);
  const Tensor analytic = grads.contains(x) ? grads.at(x) : Tensor(point.shape(), 0.0);

  GradCheckResult result;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = eval_scalar(f, probe);
    probe[i] = orig - h;
    const double fm = eval_scalar(f, probe);
    probe[i] = orig;
    record(result, "input", i, analytic[i], (fp - fm) / (2.0 * h));
  }
  return result;
}

namespace {

// Loss plus the on/off pattern of every relu in the graph. A central
// difference is a valid oracle only when the pattern is the same at both
// ends of its stencil as at the centre.
struct Probe {
  double loss = 0.0;
  std::vector<bool> pattern;
};

Probe probe_loss(const Model& model, const Tensor& x, std::span<const int> y) {
  // x tracks gradients so that every node keeps its inputs for the walk.
  const Var loss = ops::softmax_cross_entropy(model.forward(Var::leaf(x, true)), y);
  Probe p{loss.value().item(), {}};
  std::vector<Var> stack{loss};
  std::unordered_set<std::uint64_t> seen;
  while (!stack.empty()) {
    const Var v = stack.back();
    stack.pop_back();
    if (!seen.insert(v.id()).second) continue;
    if (v.op() == OpKind::relu) {
      const Tensor& in = v.inputs()[0].value();
      for (std::size_t i = 0; i < in.size(); ++i) p.pattern.push_back(in[i] > 0.0);
    }
    for (const Var& in : v.inputs()) stack.push_back(in);
  }
  return p;
}

}  // namespace

GradCheckResult check_model_gradients(const Model& model, const Tensor& x, std::span<const int> y, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("check_model_gradients: step must be positive");
  ParamBinding binding;
  const Var xv = Var::leaf(x, true);
  const Gradients grads = backward(ops::softmax_cross_entropy(model.forward(xv, &binding), y));
  const auto param_grads = binding.collect(grads);

  GradCheckResult result;
  Model probe = model;
  const std::vector<bool> centre = probe_loss(probe, x, y).pattern;
  // Central difference of coordinate `slot`, or nullopt when the stencil
  // crosses a relu boundary.
  auto difference = [&](double& slot, const Tensor& input) -> std::optional<double> {
    const double orig = slot;
    double f[4];
    const double offsets[4] = {2.0 * h, h, -h, -2.0 * h};
    bool smooth = true;
    for (int k = 0; k < 4; ++k) {
      slot = orig + offsets[k];
      const Probe pr = probe_loss(probe, input, y);
      f[k] = pr.loss;
      smooth = smooth && pr.pattern == centre;
    }
    slot = orig;
    if (!smooth) return std::nullopt;
    return (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
  };
  for (const ParamRef& p : probe.parameters()) {
    Tensor& w = *p.value;
    const Tensor& g = param_grads.at(p.name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (const auto numeric = difference(w[i], x)) record(result, p.name, i, g[i], *numeric);
      else ++result.skipped;
    }
  }
  const Tensor gx = grads.contains(xv) ? grads.at(xv) : Tensor(x.shape(), 0.0);
  Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (const auto numeric = difference(xp[i], xp)) record(result, "input", i, gx[i], *numeric);
    else ++result.skipped;
  }
  return result;
}

ModelSpec random_small_spec(Rng& rng) {
  ModelSpec spec;
  const std::size_t c = 1 + rng.below(3);
  const std::size_t side = 4 + rng.below(3);
  spec.input_shape = {c, side, side};
  spec.num_classes = 2 + rng.below(3);
  for (std::size_t i = 0; i < c; ++i) {
    spec.mean.push_back(rng.uniform(0.3, 0.6));
    spec.std.push_back(rng.uniform(0.2, 0.5));
  }
  const std::size_t k = 2 + rng.below(2);
  spec.layers.push_back(LayerSpec::conv(2 + rng.below(2), k, 1 + rng.below(2), rng.below(2)));
  spec.layers.push_back(LayerSpec::relu());
  if (rng.below(2) == 1) spec.layers.push_back(LayerSpec::residual(2 + rng.below(2), 1 + rng.below(2)));
  spec.layers.push_back(LayerSpec::flatten());
  spec.layers.push_back(LayerSpec::dense(3 + rng.below(4)));
  spec.layers.push_back(LayerSpec::relu());
  spec.layers.push_back(LayerSpec::dense(spec.num_classes));
  return spec;
}

GradCheckSuiteResult run_gradcheck_suite(std::size_t networks, std::uint64_t seed, double h) {
  GradCheckSuiteResult out;
  Rng rng(seed);
  for (std::size_t n = 0; n < networks; ++n) {
    const ModelSpec spec = random_small_spec(rng);
    Model model = build_model(spec, rng.next_u64());
    // Zero biases put a dead unit's successor exactly on a relu kink.
    for (const ParamRef& p : model.parameters()) {
      if (p.name.ends_with(".bias")) {
        for (std::size_t i = 0; i < p.value->size(); ++i) (*p.value)[i] = rng.uniform(-0.5, 0.5);
      }
    }
    const std::size_t batch = 2 + rng.below(2);
    const auto [c, hh, ww] = spec.input_shape;
    Tensor x({batch, c, hh, ww});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
    std::vector<int> y(batch);
    for (int& label : y) label = static_cast<int>(rng.below(spec.num_classes));
    const GradCheckResult r = check_model_gradients(model, x, y, h);
    out.coordinates += r.coordinates;
    out.skipped += r.skipped;
    if (n == 0 || r.max_rel_error > out.worst.max_rel_error) {
      out.worst = r;
      out.worst_network = n;
    }
    ++out.networks;
  }
  return out;
}

}  // namespace dwf
