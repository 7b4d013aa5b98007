// SPDX-License-Identifier: Apache-2.0
#pragma once

// White-box ℓ∞ evasion attacks in raw [0,1] pixel space.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dwf/common.hpp"
#include "dwf/nn.hpp"

namespace dwf {

enum class AttackKind { fgsm, pgd };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::fgsm;
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int iterations = 10;
  std::vector<double> epsilon_grid{0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09};
  std::vector<int> iteration_grid{10, 20, 30, 40, 50};
  /// PGD starts at x unless set, in which case it starts from a uniform draw
  /// in the ε-ball.
  bool random_start = false;
};

struct AdversarialBatch {
  Tensor x_adv;
  Tensor x_ref;
  AttackConfig config_used;
};

using LossFn = std::function<Var(const Var& logits, std::span<const int> labels)>;

/// Mean softmax cross-entropy; the default attack objective.
Var cross_entropy_loss(const Var& logits, std::span<const int> labels);

/// ∇ₓ loss(model(x), y). Throws std::invalid_argument if the loss does not
/// depend on x. Model parameters are read only.
Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const int> y,
                      const LossFn& loss = cross_entropy_loss);

/// clamp(x + ε·sign(∇ₓℓ), 0, 1)
AdversarialBatch fgsm(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon,
                      const LossFn& loss = cross_entropy_loss);

/// Elementwise: candidate if within [x−ε, x+ε], else the nearer bound.
Tensor project_linf(const Tensor& candidate, const Tensor& x, double epsilon);

/// x⁽ⁱ⁺¹⁾ = clamp(project_linf(x⁽ⁱ⁾ + α·sign(∇ₓℓ(x⁽ⁱ⁾)), x, ε), 0, 1), from x⁽⁰⁾ = x.
/// start_rng is consulted only when random_start is set.
AdversarialBatch pgd(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon, double alpha,
                     int iterations, bool random_start = false, Rng* start_rng = nullptr,
                     const LossFn& loss = cross_entropy_loss);

/// Runs the attack described by a concrete config (epsilon/alpha/iterations).
AdversarialBatch run_attack(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg,
                            Rng* start_rng = nullptr);

/// Uniform draw from the configured grid: epsilon_grid for FGSM,
/// iteration_grid for PGD. Consumes exactly one RNG event and returns cfg
/// with the drawn value filled in. Throws on an empty grid.
AttackConfig sample_attack_setting(Rng& rng, const AttackConfig& cfg);

}  // namespace dwf
