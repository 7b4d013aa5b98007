// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "dwf/common.hpp"
#include "dwf/nn.hpp"

namespace dwf {

using ScalarFunction = std::function<Var(const Var&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  /// Which tensor holds the worst coordinate ("input" or a parameter name).
  std::string worst_tensor;
  std::size_t coordinates = 0;
  /// Coordinates left out because the difference stencil crosses a relu
  /// boundary, where central differences do not estimate the gradient.
  std::size_t skipped = 0;
};

/// Compares backward() against central differences (f(x+h·eᵢ) − f(x−h·eᵢ))/2h
/// at every coordinate of point. The error per coordinate is
/// |a − b| / max(|a|, |b|, 1e−8). Throws if f is not scalar or h <= 0.
GradCheckResult finite_difference_check(const ScalarFunction& f, const Tensor& point, double h = 1e-5);

/// backward() of mean cross-entropy against the fourth-order central
/// difference (−f(+2h) + 8f(+h) − 8f(−h) + f(−2h))/12h over every parameter
/// and input coordinate, with the same error measure. Coordinates whose
/// stencil changes the on/off pattern of any relu are counted in `skipped`
/// instead of compared.
GradCheckResult check_model_gradients(const Model& model, const Tensor& x, std::span<const int> y, double h = 1e-3);

/// A small random conv → relu → [residual] → flatten → dense → relu → dense
/// network on a tiny input.
ModelSpec random_small_spec(Rng& rng);

struct GradCheckSuiteResult {
  std::size_t networks = 0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;
  GradCheckResult worst;
  std::size_t worst_network = 0;
};

/// check_model_gradients on `networks` seeded random networks and inputs.
GradCheckSuiteResult run_gradcheck_suite(std::size_t networks, std::uint64_t seed, double h = 1e-3);

}  // namespace dwf
