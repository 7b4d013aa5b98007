// SPDX-License-Identifier: Apache-2.0
#include "dwf/train.hpp"

#include <cmath>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "dwf/ops.hpp"

namespace dwf {

void TrainingConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("training: epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("training: batch_size must be positive");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw std::invalid_argument("training: lr0 must be finite and >= 0");
  if (!(eta_min >= 0.0 && eta_min <= lr0)) throw std::invalid_argument("training: eta_min must lie in [0, lr0]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("training: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("training: weight_decay must be >= 0");
}

namespace {

void check_dataset(const Dataset& ds, std::array<std::size_t, 3> input_shape, std::size_t num_classes) {
  if (ds.size() == 0) throw DataError("training: empty dataset");
  const Shape& s = ds.images.shape();
  if (s.size() != 4 || s[1] != input_shape[0] || s[2] != input_shape[1] || s[3] != input_shape[2]) {
    throw DataError("training: dataset images " + to_string(s) + " do not match model input");
  }
  if (ds.num_classes != num_classes) {
    throw DataError("training: dataset has " + std::to_string(ds.num_classes) + " classes, model has " +
                    std::to_string(num_classes));
  }
}

std::size_t steps_per_epoch(const Dataset& ds, std::size_t batch_size) {
  return (ds.size() + batch_size - 1) / batch_size;
}

// One optimizer stream: cross-entropy, backward, cosine-scheduled SGD.
class Stepper {
 public:
  Stepper(Classifier& model, const TrainingConfig& cfg, std::size_t t_max)
      : model_(model), sched_{cfg.lr0, cfg.eta_min, t_max} {
    state_.lr = cfg.lr0;
    state_.momentum = cfg.momentum;
    state_.weight_decay = cfg.weight_decay;
  }

  // lr < 0 selects the cosine schedule at the current step.
  void step(const Tensor& x, std::span<const int> y, const std::vector<ParamRef>& params, StepRecord& rec,
            double fixed_lr = -1.0) {
    ParamBinding binding;
    const Var logits = model_.forward(Var::leaf(x), &binding);
    const Var loss = ops::softmax_cross_entropy(logits, y);
    rec.loss = loss.value().item();
    if (!std::isfinite(rec.loss)) {
      std::ostringstream msg;
      msg << "training diverged: loss " << rec.loss << " at epoch " << rec.epoch << ", step " << rec.step
          << " (lr " << state_.lr << ")";
      throw NumericalError(msg.str());
    }
    const auto pred = ops::argmax_rows(logits.value());
    rec.samples = y.size();
    rec.correct = 0;
    for (std::size_t i = 0; i < y.size(); ++i) rec.correct += pred[i] == static_cast<std::size_t>(y[i]);
    const auto grads = binding.collect(backward(loss));
    if (fixed_lr >= 0.0) {
      state_.lr = fixed_lr;
    } else {
      state_.lr = cosine_lr(t_, sched_);
      ++t_;
    }
    rec.lr = state_.lr;
    sgd_step(params, grads, state_);
  }

 private:
  Classifier& model_;
  OptimizerState state_;
  LrSchedule sched_;
  std::size_t t_ = 0;
};

void close_epoch(TrainingTrace& trace, std::size_t first_step) {
  double loss = 0.0;
  std::size_t n = 0, correct = 0;
  for (std::size_t i = first_step; i < trace.steps.size(); ++i) {
    loss += trace.steps[i].loss * static_cast<double>(trace.steps[i].samples);
    n += trace.steps[i].samples;
    correct += trace.steps[i].correct;
  }
  trace.epoch_loss.push_back(n ? loss / static_cast<double>(n) : 0.0);
  trace.epoch_accuracy.push_back(n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0);
}

struct DrawStreams {
  explicit DrawStreams(std::uint64_t seed)
      : fgsm(derive_seed(seed, "fgsm")), pgd(derive_seed(seed, "pgd")), pgd_start(derive_seed(seed, "pgd-start")) {}
  Rng fgsm;
  Rng pgd;
  Rng pgd_start;
};

AttackConfig with_kind(AttackConfig cfg, AttackKind kind) {
  cfg.kind = kind;
  return cfg;
}

Tensor fgsm_input(const Classifier& model, const Batch& b, const AttackConfig& atk, DrawStreams& rng,
                  StepRecord& rec) {
  const std::uint64_t before = rng.fgsm.events();
  const AttackConfig drawn = sample_attack_setting(rng.fgsm, with_kind(atk, AttackKind::fgsm));
  rec.fgsm_draws = rng.fgsm.events() - before;
  rec.epsilon = drawn.epsilon;
  return fgsm(model, b.x, b.y, drawn.epsilon).x_adv;
}

Tensor pgd_input(const Classifier& model, const Batch& b, const AttackConfig& atk, DrawStreams& rng,
                 StepRecord& rec) {
  const std::uint64_t before = rng.pgd.events();
  const AttackConfig drawn = sample_attack_setting(rng.pgd, with_kind(atk, AttackKind::pgd));
  rec.pgd_draws = rng.pgd.events() - before;
  rec.iterations = drawn.iterations;
  return pgd(model, b.x, b.y, drawn.epsilon, drawn.alpha, drawn.iterations, drawn.random_start, &rng.pgd_start)
      .x_adv;
}

}  // namespace

ExpertResult train_expert(ExpertRole role, const Dataset& ds, const ModelSpec& spec, const TrainingConfig& cfg) {
  cfg.validate();
  check_dataset(ds, spec.input_shape, spec.num_classes);
  ExpertResult out{build_model(spec, derive_seed(cfg.seed, "init")), {}};
  Model& model = out.model;
  const BatchPlan plan{cfg.batch_size, true, derive_seed(cfg.seed, "shuffle"), false};
  const std::size_t spe = steps_per_epoch(ds, cfg.batch_size);
  Stepper stepper(model, cfg, cfg.t_max ? cfg.t_max : cfg.epochs * spe);
  DrawStreams rng(cfg.seed);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t first = out.trace.steps.size();
    for (const Batch& b : make_batches(ds, plan, epoch)) {
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step++;
      Tensor input;
      model.set_mode(Mode::eval);
      switch (role) {
        case ExpertRole::benign: input = b.x; break;
        case ExpertRole::fgsm: input = fgsm_input(model, b, cfg.attack, rng, rec); break;
        case ExpertRole::pgd: input = pgd_input(model, b, cfg.attack, rng, rec); break;
      }
      model.set_mode(Mode::train);
      stepper.step(input, b.y, model.parameters(), rec);
      out.trace.steps.push_back(rec);
    }
    close_epoch(out.trace, first);
  }
  model.set_mode(Mode::eval);
  return out;
}

ExpertResult train_benign_expert(const Dataset& ds, const ModelSpec& spec, const TrainingConfig& cfg) {
  return train_expert(ExpertRole::benign, ds, spec, cfg);
}

ExpertResult train_fgsm_expert(const Dataset& ds, const ModelSpec& spec, const TrainingConfig& cfg) {
  return train_expert(ExpertRole::fgsm, ds, spec, cfg);
}

ExpertResult train_pgd_expert(const Dataset& ds, const ModelSpec& spec, const TrainingConfig& cfg) {
  return train_expert(ExpertRole::pgd, ds, spec, cfg);
}

MoeResult train_end_to_end(MixtureOfExperts moe, const Dataset& ds, const TrainingConfig& cfg,
                           const MixedBatchObserver& observer) {
  if (!moe.assembled()) throw std::invalid_argument("train_end_to_end: mixture is not assembled");
  cfg.validate();
  check_dataset(ds, moe.input_shape(), moe.num_classes());
  MoeResult out{std::move(moe), {}};
  MixtureOfExperts& m = out.moe;
  const BatchPlan plan{cfg.batch_size, true, derive_seed(cfg.seed, "shuffle"), false};
  const std::size_t spe = steps_per_epoch(ds, cfg.batch_size);
  Stepper stepper(m, cfg, cfg.t_max ? cfg.t_max : cfg.epochs * spe);
  DrawStreams rng(cfg.seed);

  std::size_t step = 0;
  const std::size_t total = cfg.gate_warmup_epochs + cfg.epochs;
  for (std::size_t epoch = 0; epoch < total; ++epoch) {
    const bool warmup = epoch < cfg.gate_warmup_epochs;
    const std::size_t first = out.trace.steps.size();
    for (const Batch& b : make_batches(ds, plan, epoch)) {
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step++;
      m.set_mode(Mode::eval);
      const Tensor x_fgsm = fgsm_input(m, b, cfg.attack, rng, rec);
      const Tensor x_pgd = pgd_input(m, b, cfg.attack, rng, rec);
      m.set_mode(Mode::train);

      MixedBatch mixed;
      const Tensor parts[] = {b.x, x_fgsm, x_pgd};
      mixed.x = concat_rows(parts);
      mixed.y.reserve(3 * b.y.size());
      for (int r = 0; r < 3; ++r) mixed.y.insert(mixed.y.end(), b.y.begin(), b.y.end());
      mixed.clean_size = b.y.size();
      mixed.epsilon = rec.epsilon;
      mixed.iterations = rec.iterations;
      if (observer) observer(mixed);

      if (warmup) stepper.step(mixed.x, mixed.y, m.gate_parameters(), rec, cfg.lr0);
      else stepper.step(mixed.x, mixed.y, m.parameters(), rec);
      out.trace.steps.push_back(rec);
    }
    close_epoch(out.trace, first);
  }
  m.set_mode(Mode::eval);
  return out;
}

PipelineResult run_pipeline(const Dataset& ds, const PipelineConfig& cfg, std::uint64_t master_seed) {
  PipelineResult out;
  for (std::size_t i = 0; i < cfg.benign_experts; ++i) out.roles.push_back(ExpertRole::benign);
  for (std::size_t i = 0; i < cfg.fgsm_experts; ++i) out.roles.push_back(ExpertRole::fgsm);
  for (std::size_t i = 0; i < cfg.pgd_experts; ++i) out.roles.push_back(ExpertRole::pgd);
  if (out.roles.empty()) throw std::invalid_argument("pipeline: no experts requested");

  for (std::size_t i = 0; i < out.roles.size(); ++i) {
    TrainingConfig c = cfg.expert_training;
    c.seed = derive_seed(master_seed, "expert:" + std::to_string(i));
    std::clog << "pretraining expert " << i << " (" << to_string(out.roles[i]) << ")\n";
    out.pretrained.push_back(train_expert(out.roles[i], ds, cfg.expert_spec, c).model);
  }
  const ModelSpec gate_spec = default_gate_spec(cfg.expert_spec.input_shape, out.roles.size(), cfg.expert_spec.mean,
                                                cfg.expert_spec.std);
  MixtureOfExperts moe = assemble_moe(out.pretrained, out.roles, gate_spec, derive_seed(master_seed, "gate"));
  TrainingConfig c = cfg.moe_training;
  c.seed = derive_seed(master_seed, "end-to-end");
  std::clog << "end-to-end training of " << out.roles.size() << " experts\n";
  MoeResult trained = train_end_to_end(std::move(moe), ds, c);
  out.moe = std::move(trained.moe);
  out.trace = std::move(trained.trace);
  return out;
}

}  // namespace dwf
