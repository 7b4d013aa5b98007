// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dwf/autograd.hpp"

namespace dwf {

enum class LayerKind { conv2d, dense, relu, residual, avgpool, flatten };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One entry of a layer chain. Fields not used by a kind are ignored.
///
/// residual: conv3x3(stride) → relu → conv3x3 → (+ shortcut) → relu, where the
/// shortcut is the identity when the shape is preserved and a strided 1×1
/// convolution otherwise. avgpool with window 0 pools globally.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec conv(std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec dense(std::size_t out);
  static LayerSpec relu();
  static LayerSpec residual(std::size_t out, std::size_t stride);
  static LayerSpec avgpool(std::size_t window = 0);
  static LayerSpec flatten();

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::array<std::size_t, 3> input_shape{3, 32, 32};  // C, H, W
  std::size_t num_classes = 10;
  /// Fixed per-channel input normalization (x − mean)/std, applied before
  /// the first layer; never trained.
  std::vector<double> mean;
  std::vector<double> std;

  bool operator==(const ModelSpec&) const = default;
};

/// Per-channel statistics used for CIFAR-10 inputs.
inline constexpr std::array<double, 3> kCifarMean{0.4914, 0.4822, 0.4465};
inline constexpr std::array<double, 3> kCifarStd{0.2023, 0.1994, 0.2010};

/// conv(C→16) + residual(16→32, /2) + residual(32→64, /2) + global avgpool +
/// dense(→K).
ModelSpec default_backbone_spec(std::array<std::size_t, 3> input_shape = {3, 32, 32}, std::size_t num_classes = 10,
                                std::vector<double> mean = {kCifarMean.begin(), kCifarMean.end()},
                                std::vector<double> std = {kCifarStd.begin(), kCifarStd.end()});

/// Per-sample output shape of every layer. Throws std::invalid_argument
/// naming the offending layer pair when the chain is inconsistent or does
/// not end in a flat [num_classes] output.
std::vector<Shape> infer_shapes(const ModelSpec& spec);

/// Trainable parameter count derived from the spec alone.
std::size_t count_parameters(const ModelSpec& spec);

struct Parameter {
  std::string name;
  Tensor value;
};

/// A parameter as seen from the outermost classifier: its fully qualified
/// name (e.g. "expert2.layers.0.weight") and storage.
struct ParamRef {
  std::string name;
  Tensor* value;
};

struct ConstParamRef {
  std::string name;
  const Tensor* value;
};

/// Records the leaf Vars a forward pass created for parameters so their
/// gradients can be collected after backward().
class ParamBinding {
 public:
  Var bind(const std::string& name, const Tensor& value);
  std::map<std::string, Tensor> collect(const Gradients& grads) const;
  std::size_t size() const { return vars_.size(); }

 private:
  std::vector<std::pair<std::string, Var>> vars_;
};

/// Anything that maps images [N,C,H,W] in [0,1] to logits [N,K] through a
/// differentiable graph: single models and mixtures alike.
class Classifier {
 public:
  virtual ~Classifier() = default;

  /// With a binding, parameters become gradient-tracked leaves recorded in
  /// it; without one they enter the graph as constants.
  virtual Var forward(const Var& x, ParamBinding* binding = nullptr) const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::array<std::size_t, 3> input_shape() const = 0;
  virtual std::vector<ParamRef> parameters() = 0;
  virtual std::vector<ConstParamRef> parameters() const = 0;

  /// Inference without gradient tracking.
  Tensor logits(const Tensor& x) const { return forward(Var::leaf(x)).value(); }
};

enum class Mode { train, eval };

class Model : public Classifier {
 public:
  Model(ModelSpec spec, std::vector<Parameter> params);

  Var forward(const Var& x, ParamBinding* binding = nullptr) const override;
  /// Forward with parameter names prefixed, for models nested in a mixture.
  Var forward_scoped(const Var& x, ParamBinding* binding, const std::string& prefix) const;

  std::size_t num_classes() const override { return spec_.num_classes; }
  std::array<std::size_t, 3> input_shape() const override { return spec_.input_shape; }
  std::vector<ParamRef> parameters() override;
  std::vector<ConstParamRef> parameters() const override;
  /// parameters() with every name prefixed.
  std::vector<ParamRef> parameters_scoped(const std::string& prefix);
  std::vector<ConstParamRef> parameters_scoped(const std::string& prefix) const;

  const ModelSpec& spec() const { return spec_; }
  const Parameter& parameter(std::string_view name) const;
  Parameter& parameter(std::string_view name);

  Mode mode() const { return mode_; }
  /// No layer in the supported set depends on the mode; it is recorded so
  /// that callers and checkpoints can state which one was used.
  void set_mode(Mode mode) { mode_ = mode; }

 private:
  ModelSpec spec_;
  std::vector<Parameter> params_;
  Mode mode_ = Mode::train;
};

/// Fan-in scaled uniform initialization: weights ~ U(−b, b) with
/// b = sqrt(6 / fan_in), biases zero. Deterministic in (spec, seed).
Model build_model(const ModelSpec& spec, std::uint64_t seed);

/// Order-sensitive hash over all parameter names and values.
std::uint64_t parameter_checksum(const Classifier& model);

struct OptimizerState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::map<std::string, Tensor> velocity;
};

/// v ← momentum·v + (g + weight_decay·w); w ← w − lr·v, for every parameter.
/// Throws std::invalid_argument if a parameter has no gradient.
void sgd_step(const std::vector<ParamRef>& params, const std::map<std::string, Tensor>& grads, OptimizerState& state);
void sgd_step(Classifier& model, const std::map<std::string, Tensor>& grads, OptimizerState& state);

struct LrSchedule {
  double lr0 = 0.01;
  double eta_min = 0.0;
  std::size_t t_max = 1;
};

/// eta_min + ½(lr0 − eta_min)(1 + cos(π·t/t_max)); steps past t_max return
/// eta_min (logged once per process).
double cosine_lr(std::size_t t, const LrSchedule& sched);

}  // namespace dwf
