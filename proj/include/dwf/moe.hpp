// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dwf/nn.hpp"

namespace dwf {

enum class ExpertRole { benign, fgsm, pgd };

std::string to_string(ExpertRole role);
ExpertRole parse_expert_role(const std::string& name);

/// flatten → dense(h1) → relu → dense(h2) → relu → dense(h3) → relu →
/// dense(n), with h1:h2:h3 = in/3 : in/6 : in/24 where in = C·H·W. For a
/// 3×32×32 input this is 1024/512/128.
ModelSpec default_gate_spec(std::array<std::size_t, 3> input_shape, std::size_t num_experts,
                            std::vector<double> mean = {kCifarMean.begin(), kCifarMean.end()},
                            std::vector<double> std = {kCifarStd.begin(), kCifarStd.end()});

/// A Model whose n outputs pass through a row softmax.
class GatingNetwork {
 public:
  GatingNetwork() = default;
  explicit GatingNetwork(Model model);

  /// Weights [N, n]; rows are non-negative and sum to 1.
  Var forward(const Var& x, ParamBinding* binding = nullptr, const std::string& prefix = "gate.") const;
  std::size_t num_experts() const { return model_ ? model_->num_classes() : 0; }

  const Model& model() const;
  Model& model();

 private:
  std::optional<Model> model_;
};

/// Gate weights for a batch, without gradient tracking.
Tensor gating_forward(const GatingNetwork& gate, const Tensor& x);

/// y(x) = Σᵢ wᵢ(x)·fᵢ(x) over expert logits, every expert evaluated.
///
/// Parameters are exposed as "expert{i}.<name>" and "gate.<name>". A
/// default-constructed mixture has no experts and is rejected by training.
class MixtureOfExperts : public Classifier {
 public:
  MixtureOfExperts() = default;
  MixtureOfExperts(std::vector<Model> experts, std::vector<ExpertRole> roles, GatingNetwork gate);

  Var forward(const Var& x, ParamBinding* binding = nullptr) const override;
  /// Aggregation with externally supplied weights [N, n] instead of the gate.
  Var forward_with_weights(const Var& x, const Var& weights, ParamBinding* binding = nullptr) const;
  /// Expert logits [N,K] for every expert.
  std::vector<Var> expert_logits(const Var& x, ParamBinding* binding = nullptr) const;

  std::size_t num_classes() const override;
  std::array<std::size_t, 3> input_shape() const override;
  std::vector<ParamRef> parameters() override;
  std::vector<ConstParamRef> parameters() const override;
  std::vector<ParamRef> gate_parameters();

  bool assembled() const { return !experts_.empty(); }
  std::size_t size() const { return experts_.size(); }
  const std::vector<Model>& experts() const { return experts_; }
  std::vector<Model>& experts() { return experts_; }
  const std::vector<ExpertRole>& roles() const { return roles_; }
  const GatingNetwork& gate() const { return gate_; }
  GatingNetwork& gate() { return gate_; }

  void set_mode(Mode mode);

 private:
  std::vector<Model> experts_;
  std::vector<ExpertRole> roles_;
  GatingNetwork gate_;
};

std::string expert_prefix(std::size_t index);

/// Adopts the experts unchanged and initializes a fresh gate from
/// gate_spec with the given seed. Throws std::invalid_argument when the
/// experts disagree on input shape or class count, or the gate does not
/// match them.
MixtureOfExperts assemble_moe(std::vector<Model> experts, std::vector<ExpertRole> roles, const ModelSpec& gate_spec,
                              std::uint64_t seed);

}  // namespace dwf
