// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "dwf/nn.hpp"
#include "dwf/ops.hpp"
#include "helpers.hpp"

using namespace dwf;
using dwf::testing::random_tensor;
using dwf::testing::tiny_cnn_spec;

TEST_CASE("build_model determinism") {
  const ModelSpec spec = default_backbone_spec({3, 16, 16}, 4);
  CHECK(parameter_checksum(build_model(spec, 1)) == parameter_checksum(build_model(spec, 1)));
  CHECK(parameter_checksum(build_model(spec, 1)) != parameter_checksum(build_model(spec, 2)));
  std::size_t total = 0;
  for (const auto& p : build_model(spec, 1).parameters()) total += p.value->size();
  CHECK(total == count_parameters(spec));
}

TEST_CASE("infer_shapes rejects an inconsistent chain and names the pair") {
  ModelSpec spec = tiny_cnn_spec();
  spec.layers = {LayerSpec::conv(4, 3), LayerSpec::dense(2)};
  try {
    infer_shapes(spec);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("conv2d") != std::string::npos);
    CHECK(msg.find("dense") != std::string::npos);
  }
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(3)};
  CHECK_THROWS_AS(infer_shapes(spec), std::invalid_argument);
  spec.layers = {LayerSpec::conv(4, 9)};
  CHECK_THROWS_AS(infer_shapes(spec), std::invalid_argument);
}

TEST_CASE("forward contracts") {
  Rng rng(2);
  const Model m = build_model(tiny_cnn_spec(), 3);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Var xv = Var::leaf(x, true);
  const int y[] = {0, 1};
  const Gradients g = backward(ops::softmax_cross_entropy(m.forward(xv), y));
  CHECK(g.contains(xv));
  const Tensor both = m.logits(x);
  const Tensor first = m.logits(x.slice_rows(0, 1));
  CHECK(max_abs_diff(first, both.slice_rows(0, 1)) <= 1e-12);
  CHECK(all_finite(both));
  CHECK_THROWS_AS(m.logits(Tensor({1, 3, 7, 8})), std::invalid_argument);
}

TEST_CASE("eval mode forward and mode round trip") {
  Rng rng(4);
  Model m = build_model(tiny_cnn_spec(), 5);
  const Tensor x = random_tensor({3, 3, 8, 8}, rng);
  const std::uint64_t before = parameter_checksum(m);
  m.set_mode(Mode::eval);
  CHECK(m.logits(x) == m.logits(x));
  m.set_mode(Mode::train);
  CHECK(parameter_checksum(m) == before);
}

namespace {
double one_param_step(double w, double g, double lr, double momentum, double wd, int steps) {
  Tensor weight({1}, {w});
  std::vector<ParamRef> params{{"w", &weight}};
  OptimizerState st;
  st.lr = lr;
  st.momentum = momentum;
  st.weight_decay = wd;
  for (int i = 0; i < steps; ++i) sgd_step(params, {{"w", Tensor({1}, {g})}}, st);
  return weight[0];
}
}  // namespace

TEST_CASE("sgd_step worked examples") {
  CHECK(std::abs(one_param_step(1.0, 0.1, 0.01, 0.0, 0.0, 1) - 0.999) <= 1e-12);
  CHECK(std::abs(one_param_step(1.0, 0.1, 0.01, 0.0, 5e-4, 1) - 0.998995) <= 1e-12);
  CHECK(std::abs(one_param_step(1.0, 0.1, 0.01, 0.9, 0.0, 2) - 0.9971) <= 1e-12);
  Tensor w({1}, {1.0});
  OptimizerState st;
  CHECK_THROWS_AS(sgd_step({{"w", &w}}, {}, st), std::invalid_argument);
}

TEST_CASE("cosine_lr") {
  const LrSchedule s{0.01, 0.0, 100};
  CHECK(cosine_lr(0, s) == 0.01);
  CHECK(cosine_lr(100, s) == 0.0);
  CHECK(std::abs(cosine_lr(50, s) - 0.005) <= 1e-18);
  CHECK(cosine_lr(1000, s) == 0.0);
  const LrSchedule m{0.1, 0.02, 10};
  CHECK(cosine_lr(10, m) == 0.02);
  CHECK(cosine_lr(25, m) == 0.02);
  CHECK_THROWS_AS(cosine_lr(0, LrSchedule{0.01, 0.0, 0}), std::invalid_argument);
}
