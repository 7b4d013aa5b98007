// SPDX-License-Identifier: Apache-2.0
#include "dwf/attacks.hpp"

#include <algorithm>
#include <stdexcept>

#include "dwf/kernels.hpp"
#include "dwf/ops.hpp"

namespace dwf {

std::string to_string(AttackKind kind) { return kind == AttackKind::fgsm ? "fgsm" : "pgd"; }

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "pgd") return AttackKind::pgd;
  throw std::invalid_argument("unknown attack kind '" + name + "'");
}

Var cross_entropy_loss(const Var& logits, std::span<const int> labels) {
  return ops::softmax_cross_entropy(logits, labels);
}

Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const int> y, const LossFn& loss) {
  const Var xv = Var::leaf(x, true);
  const Var l = loss(model.forward(xv), y);
  const Gradients grads = backward(l);
  if (!grads.contains(xv)) throw std::invalid_argument("attack: input gradient unavailable (loss does not track x)");
  return grads.at(xv);
}

namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("attack: epsilon must be non-negative");
}

// x + step·sign(g), clamped to [0,1].
Tensor sign_step(const Tensor& x, const Tensor& grad, double step) {
  const auto& k = kernels::active();
  Tensor dir(x.shape());
  k.sign(x.size(), grad.raw(), dir.raw());
  Tensor out = x;
  k.axpy(x.size(), step, dir.raw(), out.raw());
  return out;
}

}  // namespace

AdversarialBatch fgsm(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon,
                      const LossFn& loss) {
  check_epsilon(epsilon);
  const Tensor g = input_gradient(model, x, y, loss);
  Tensor moved = sign_step(x, g, epsilon);
  Tensor adv(x.shape());
  kernels::active().clamp(x.size(), moved.raw(), 0.0, 1.0, adv.raw());
  AttackConfig used;
  used.kind = AttackKind::fgsm;
  used.epsilon = epsilon;
  used.epsilon_grid = {epsilon};
  return {std::move(adv), x, used};
}

Tensor project_linf(const Tensor& candidate, const Tensor& x, double epsilon) {
  if (candidate.shape() != x.shape()) {
    throw std::invalid_argument("project_linf: shape mismatch " + to_string(candidate.shape()) + " vs " +
                                to_string(x.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lo = x[i] - epsilon, hi = x[i] + epsilon;
    const double c = candidate[i];
    out[i] = c > hi ? hi : (c < lo ? lo : c);
  }
  return out;
}

AdversarialBatch pgd(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon, double alpha,
                     int iterations, bool random_start, Rng* start_rng, const LossFn& loss) {
  check_epsilon(epsilon);
  if (!(alpha > 0.0)) throw std::invalid_argument("pgd: alpha must be positive");
  if (iterations < 1) throw std::invalid_argument("pgd: iterations must be at least 1");
  const auto& k = kernels::active();
  Tensor cur = x;
  if (random_start) {
    if (start_rng == nullptr) throw std::invalid_argument("pgd: random start needs an RNG");
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += start_rng->uniform(-epsilon, epsilon);
    k.clamp(cur.size(), cur.raw(), 0.0, 1.0, cur.raw());
  }
  for (int it = 0; it < iterations; ++it) {
    const Tensor g = input_gradient(model, cur, y, loss);
    Tensor projected = project_linf(sign_step(cur, g, alpha), x, epsilon);
    k.clamp(projected.size(), projected.raw(), 0.0, 1.0, cur.raw());
  }
  AttackConfig used;
  used.kind = AttackKind::pgd;
  used.epsilon = epsilon;
  used.alpha = alpha;
  used.iterations = iterations;
  used.iteration_grid = {iterations};
  used.random_start = random_start;
  return {std::move(cur), x, used};
}

AdversarialBatch run_attack(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg,
                            Rng* start_rng) {
  if (cfg.kind == AttackKind::fgsm) return fgsm(model, x, y, cfg.epsilon);
  return pgd(model, x, y, cfg.epsilon, cfg.alpha, cfg.iterations, cfg.random_start, start_rng);
}

AttackConfig sample_attack_setting(Rng& rng, const AttackConfig& cfg) {
  AttackConfig out = cfg;
  const std::size_t n = cfg.kind == AttackKind::fgsm ? cfg.epsilon_grid.size() : cfg.iteration_grid.size();
  if (n == 0) throw std::invalid_argument("sample_attack_setting: empty " + to_string(cfg.kind) + " grid");
  // One 64-bit draw; the floor(u·n) bias is below 2⁻⁵³ for grids this small.
  const auto idx = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
  if (cfg.kind == AttackKind::fgsm) out.epsilon = cfg.epsilon_grid[idx];
  else out.iterations = cfg.iteration_grid[idx];
  return out;
}

}  // namespace dwf
