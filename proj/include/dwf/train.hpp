// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dwf/attacks.hpp"
#include "dwf/data.hpp"
#include "dwf/moe.hpp"

namespace dwf {

struct TrainingConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double eta_min = 0.0;
  /// Cosine period in optimizer steps; 0 means the whole run.
  std::size_t t_max = 0;
  std::uint64_t seed = 0;
  AttackConfig attack;
  /// Gate-only epochs (experts held fixed) run before the joint phase.
  std::size_t gate_warmup_epochs = 0;

  /// Throws std::invalid_argument unless epochs, batch_size and lr0 are
  /// positive (lr0 may be 0 to disable updates) and the rest is in range.
  void validate() const;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;
  std::size_t correct = 0;
  /// Drawn attack settings; 0 when the step drew none.
  double epsilon = 0.0;
  int iterations = 0;
  /// RNG events consumed from the FGSM and PGD draw streams by this step.
  std::uint64_t fgsm_draws = 0;
  std::uint64_t pgd_draws = 0;
};

struct TrainingTrace {
  std::vector<StepRecord> steps;
  /// Sample-weighted mean loss per epoch.
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

struct ExpertResult {
  Model model;
  TrainingTrace trace;
};

/// Cross-entropy on clean batches.
ExpertResult train_benign_expert(const Dataset& ds, const ModelSpec& spec, const TrainingConfig& cfg);
/// Each batch: ε drawn from the FGSM grid, training on fgsm(model, x, y, ε) only.
ExpertResult train_fgsm_expert(const Dataset& ds, const ModelSpec& spec, const TrainingConfig& cfg);
/// Each batch: iterations drawn from the PGD grid, training on pgd(...) only.
ExpertResult train_pgd_expert(const Dataset& ds, const ModelSpec& spec, const TrainingConfig& cfg);
ExpertResult train_expert(ExpertRole role, const Dataset& ds, const ModelSpec& spec, const TrainingConfig& cfg);

/// The 3B-sample batch of one end-to-end step.
struct MixedBatch {
  Tensor x;
  std::vector<int> y;
  std::size_t clean_size = 0;
  double epsilon = 0.0;
  int iterations = 0;
};

using MixedBatchObserver = std::function<void(const MixedBatch&)>;

struct MoeResult {
  MixtureOfExperts moe;
  TrainingTrace trace;
};

/// Joint training of gate and all experts. Each batch (x, y) is attacked
/// against the current mixture with FGSM (ε drawn from the grid) and PGD
/// (iterations drawn from the grid), and one step is taken on
/// concat(x, x_fgsm, x_pgd) with labels concat(y, y, y).
MoeResult train_end_to_end(MixtureOfExperts moe, const Dataset& ds, const TrainingConfig& cfg,
                           const MixedBatchObserver& observer = {});

struct PipelineConfig {
  ModelSpec expert_spec;
  std::size_t benign_experts = 1;
  std::size_t fgsm_experts = 2;
  std::size_t pgd_experts = 2;
  TrainingConfig expert_training;
  TrainingConfig moe_training;
};

struct PipelineResult {
  std::vector<Model> pretrained;
  std::vector<ExpertRole> roles;
  MixtureOfExperts moe;
  TrainingTrace trace;
};

/// Pretrain every expert, assemble with a fresh gate and train end to end.
/// All seeds derive from master_seed.
PipelineResult run_pipeline(const Dataset& ds, const PipelineConfig& cfg, std::uint64_t master_seed);

}  // namespace dwf
