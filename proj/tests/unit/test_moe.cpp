// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "dwf/gradcheck.hpp"
#include "dwf/moe.hpp"
#include "dwf/ops.hpp"
#include "helpers.hpp"

using namespace dwf;
using dwf::testing::linear_model;
using dwf::testing::random_tensor;
using dwf::testing::tiny_cnn_spec;

namespace {
MixtureOfExperts random_moe(std::size_t n, std::uint64_t seed) {
  std::vector<Model> experts;
  std::vector<ExpertRole> roles;
  for (std::size_t i = 0; i < n; ++i) {
    experts.push_back(build_model(tiny_cnn_spec(8, 3), seed + i));
    roles.push_back(static_cast<ExpertRole>(i % 3));
  }
  return assemble_moe(std::move(experts), roles, default_gate_spec({3, 8, 8}, n, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}),
                      seed);
}
}  // namespace

TEST_CASE("gate architecture") {
  const ModelSpec g = default_gate_spec({3, 32, 32}, 5);
  REQUIRE(g.layers.size() == 8);
  CHECK(g.layers[1].out == 1024);
  CHECK(g.layers[3].out == 512);
  CHECK(g.layers[5].out == 128);
  CHECK(g.layers[7].out == 5);
  CHECK(g.num_classes == 5);
}

TEST_CASE("gate rows are a distribution") {
  Rng rng(1);
  const MixtureOfExperts moe = random_moe(4, 3);
  const Tensor w = gating_forward(moe.gate(), random_tensor({6, 3, 8, 8}, rng));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(w[4 * r + i] >= 0.0);
      s += w[4 * r + i];
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  const MixtureOfExperts one = random_moe(1, 5);
  CHECK(gating_forward(one.gate(), random_tensor({3, 3, 8, 8}, rng)) == Tensor({3, 1}, 1.0));
}

TEST_CASE("weighted aggregation worked example") {
  std::vector<Model> experts{linear_model({1, 1, 1}, 2, {1, 0}), linear_model({1, 1, 1}, 2, {0, 1})};
  const MixtureOfExperts moe = assemble_moe(experts, {ExpertRole::benign, ExpertRole::fgsm},
                                            default_gate_spec({1, 1, 1}, 2, {0.0}, {1.0}), 1);
  const Var x = Var::leaf(Tensor({1, 1, 1, 1}, {1.0}));
  const Tensor out = moe.forward_with_weights(x, Var::leaf(Tensor({1, 2}, {0.25, 0.75}))).value();
  CHECK(out == Tensor({1, 2}, {0.25, 0.75}));
}

TEST_CASE("single expert and identical experts") {
  Rng rng(2);
  const Tensor x = random_tensor({5, 3, 8, 8}, rng);
  const MixtureOfExperts single = random_moe(1, 11);
  CHECK(single.logits(x) == single.experts()[0].logits(x));

  const Model e = build_model(tiny_cnn_spec(8, 3), 4);
  const MixtureOfExperts same = assemble_moe({e, e, e}, {ExpertRole::benign, ExpertRole::fgsm, ExpertRole::pgd},
                                             default_gate_spec({3, 8, 8}, 3, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}), 7);
  CHECK(same.logits(x) == e.logits(x));
}

TEST_CASE("permuting experts and weight columns leaves the output unchanged") {
  Rng rng(3);
  const MixtureOfExperts moe = random_moe(3, 21);
  const Tensor x = random_tensor({4, 3, 8, 8}, rng);
  const Tensor w = gating_forward(moe.gate(), x);
  const std::size_t perm[] = {2, 0, 1};
  std::vector<Model> permuted;
  std::vector<ExpertRole> roles;
  Tensor pw(w.shape());
  for (std::size_t i = 0; i < 3; ++i) {
    permuted.push_back(moe.experts()[perm[i]]);
    roles.push_back(moe.roles()[perm[i]]);
    for (std::size_t r = 0; r < 4; ++r) pw[3 * r + i] = w[3 * r + perm[i]];
  }
  const MixtureOfExperts other(permuted, roles, moe.gate());
  CHECK(moe.forward_with_weights(Var::leaf(x), Var::leaf(w)).value() ==
        other.forward_with_weights(Var::leaf(x), Var::leaf(pw)).value());
}

TEST_CASE("assembly preserves experts and validates shapes") {
  const Model a = build_model(tiny_cnn_spec(8, 3), 1);
  const std::uint64_t before = parameter_checksum(a);
  MixtureOfExperts moe =
      assemble_moe({a, a}, {ExpertRole::benign, ExpertRole::pgd}, default_gate_spec({3, 8, 8}, 2), 3);
  CHECK(moe.size() == 2);
  CHECK(parameter_checksum(moe.experts()[0]) == before);
  CHECK(moe.experts()[0].parameters().size() + moe.experts()[1].parameters().size() + moe.gate_parameters().size() ==
        moe.parameters().size());
  CHECK(moe.parameters().front().name.rfind("expert0.", 0) == 0);
  CHECK(moe.parameters().back().name.rfind("gate.", 0) == 0);

  CHECK_THROWS_AS(assemble_moe({a, a}, {ExpertRole::benign}, default_gate_spec({3, 8, 8}, 2), 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(assemble_moe({a, a}, {ExpertRole::benign, ExpertRole::pgd}, default_gate_spec({3, 8, 8}, 3), 3),
                  std::invalid_argument);
  const Model b = build_model(tiny_cnn_spec(8, 2), 1);
  CHECK_THROWS_AS(assemble_moe({a, b}, {ExpertRole::benign, ExpertRole::pgd}, default_gate_spec({3, 8, 8}, 2), 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(assemble_moe({}, {}, default_gate_spec({3, 8, 8}, 1), 3), std::invalid_argument);
}

TEST_CASE("mixture gradient against finite differences") {
  Rng rng(6);
  const MixtureOfExperts moe = random_moe(2, 31);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const int y[] = {0, 2};
  // The input gradient flows through the experts and the gate.
  const GradCheckResult r = finite_difference_check(
      [&](const Var& v) { return ops::softmax_cross_entropy(moe.forward(v), y); }, x, 1e-6);
  CHECK(r.max_rel_error < 1e-4);

  ParamBinding binding;
  const Gradients g = backward(ops::softmax_cross_entropy(moe.forward(Var::leaf(x), &binding), y));
  const auto grads = binding.collect(g);
  CHECK(grads.size() == moe.parameters().size());
  double gate_norm = 0.0;
  for (const auto& [name, t] : grads) {
    if (name.rfind("gate.", 0) == 0) gate_norm += max_abs(t);
  }
  CHECK(gate_norm > 0.0);
}

TEST_CASE("copies do not share the gate") {
  MixtureOfExperts a = random_moe(2, 41);
  MixtureOfExperts b = a;
  b.gate().model().parameters().front().value->data()[0] += 1.0;
  CHECK(parameter_checksum(a) != parameter_checksum(b));
}
