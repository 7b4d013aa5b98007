// SPDX-License-Identifier: Apache-2.0
#include "dwf/moe.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

#include "dwf/ops.hpp"

namespace dwf {

std::string to_string(ExpertRole role) {
  switch (role) {
    case ExpertRole::benign: return "benign";
    case ExpertRole::fgsm: return "fgsm";
    case ExpertRole::pgd: return "pgd";
  }
  return "?";
}

ExpertRole parse_expert_role(const std::string& name) {
  if (name == "benign") return ExpertRole::benign;
  if (name == "fgsm") return ExpertRole::fgsm;
  if (name == "pgd") return ExpertRole::pgd;
  throw std::invalid_argument("unknown expert kind '" + name + "' (expected benign, fgsm or pgd)");
}

ModelSpec default_gate_spec(std::array<std::size_t, 3> input_shape, std::size_t num_experts, std::vector<double> mean,
                            std::vector<double> std) {
  const std::size_t in = input_shape[0] * input_shape[1] * input_shape[2];
  ModelSpec spec;
  spec.input_shape = input_shape;
  spec.num_classes = num_experts;
  spec.mean = std::move(mean);
  spec.std = std::move(std);
  spec.layers = {LayerSpec::flatten(),
                 LayerSpec::dense(std::max<std::size_t>(1, in / 3)),
                 LayerSpec::relu(),
                 LayerSpec::dense(std::max<std::size_t>(1, in / 6)),
                 LayerSpec::relu(),
                 LayerSpec::dense(std::max<std::size_t>(1, in / 24)),
                 LayerSpec::relu(),
                 LayerSpec::dense(num_experts)};
  return spec;
}

GatingNetwork::GatingNetwork(Model model) : model_(std::move(model)) {}

const Model& GatingNetwork::model() const {
  if (!model_) throw std::logic_error("gating network is empty");
  return *model_;
}

Model& GatingNetwork::model() {
  if (!model_) throw std::logic_error("gating network is empty");
  return *model_;
}

Var GatingNetwork::forward(const Var& x, ParamBinding* binding, const std::string& prefix) const {
  return ops::softmax_rows(model().forward_scoped(x, binding, prefix));
}

Tensor gating_forward(const GatingNetwork& gate, const Tensor& x) { return gate.forward(Var::leaf(x)).value(); }

std::string expert_prefix(std::size_t index) { return "expert" + std::to_string(index) + "."; }

MixtureOfExperts::MixtureOfExperts(std::vector<Model> experts, std::vector<ExpertRole> roles, GatingNetwork gate)
    : experts_(std::move(experts)), roles_(std::move(roles)), gate_(std::move(gate)) {
  if (experts_.empty()) throw std::invalid_argument("mixture needs at least one expert");
  if (roles_.size() != experts_.size()) {
    throw std::invalid_argument("mixture has " + std::to_string(experts_.size()) + " experts but " +
                                std::to_string(roles_.size()) + " roles");
  }
  const auto shape = experts_.front().input_shape();
  const std::size_t k = experts_.front().num_classes();
  for (std::size_t i = 1; i < experts_.size(); ++i) {
    if (experts_[i].input_shape() != shape) {
      throw std::invalid_argument("expert " + std::to_string(i) + " input shape differs from expert 0");
    }
    if (experts_[i].num_classes() != k) {
      throw std::invalid_argument("expert " + std::to_string(i) + " has " + std::to_string(experts_[i].num_classes()) +
                                  " classes, expert 0 has " + std::to_string(k));
    }
  }
  if (gate_.num_experts() != experts_.size()) {
    throw std::invalid_argument("gate produces " + std::to_string(gate_.num_experts()) + " weights for " +
                                std::to_string(experts_.size()) + " experts");
  }
  if (gate_.model().input_shape() != shape) throw std::invalid_argument("gate input shape differs from the experts'");
}

std::vector<Var> MixtureOfExperts::expert_logits(const Var& x, ParamBinding* binding) const {
  std::vector<Var> out;
  out.reserve(experts_.size());
  for (std::size_t i = 0; i < experts_.size(); ++i) out.push_back(experts_[i].forward_scoped(x, binding, expert_prefix(i)));
  return out;
}

Var MixtureOfExperts::forward_with_weights(const Var& x, const Var& weights, ParamBinding* binding) const {
  if (!assembled()) throw std::logic_error("mixture has no experts");
  const std::vector<Var> logits = expert_logits(x, binding);
  return ops::weighted_sum(logits, weights);
}

Var MixtureOfExperts::forward(const Var& x, ParamBinding* binding) const {
  if (!assembled()) throw std::logic_error("mixture has no experts");
  return forward_with_weights(x, gate_.forward(x, binding), binding);
}

std::size_t MixtureOfExperts::num_classes() const { return assembled() ? experts_.front().num_classes() : 0; }

std::array<std::size_t, 3> MixtureOfExperts::input_shape() const {
  return assembled() ? experts_.front().input_shape() : std::array<std::size_t, 3>{0, 0, 0};
}

std::vector<ParamRef> MixtureOfExperts::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    auto p = experts_[i].parameters_scoped(expert_prefix(i));
    out.insert(out.end(), p.begin(), p.end());
  }
  if (assembled()) {
    auto g = gate_parameters();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

std::vector<ConstParamRef> MixtureOfExperts::parameters() const {
  std::vector<ConstParamRef> out;
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    auto p = experts_[i].parameters_scoped(expert_prefix(i));
    out.insert(out.end(), p.begin(), p.end());
  }
  if (assembled()) {
    auto g = std::as_const(gate_).model().parameters_scoped("gate.");
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

std::vector<ParamRef> MixtureOfExperts::gate_parameters() { return gate_.model().parameters_scoped("gate."); }

void MixtureOfExperts::set_mode(Mode mode) {
  for (Model& e : experts_) e.set_mode(mode);
  if (assembled()) gate_.model().set_mode(mode);
}

MixtureOfExperts assemble_moe(std::vector<Model> experts, std::vector<ExpertRole> roles, const ModelSpec& gate_spec,
                              std::uint64_t seed) {
  if (experts.empty()) throw std::invalid_argument("assemble_moe: no experts");
  if (gate_spec.num_classes != experts.size()) {
    throw std::invalid_argument("assemble_moe: gate spec has " + std::to_string(gate_spec.num_classes) +
                                " outputs for " + std::to_string(experts.size()) + " experts");
  }
  GatingNetwork gate(build_model(gate_spec, seed));
  return MixtureOfExperts(std::move(experts), std::move(roles), std::move(gate));
}

}  // namespace dwf
