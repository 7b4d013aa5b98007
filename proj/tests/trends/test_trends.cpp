// SPDX-License-Identifier: Apache-2.0
//
// Paired training runs at desk scale: adversarially trained experts against
// a benign twin with the same seed, data and budget.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dwf/config.hpp"
#include "dwf/eval.hpp"
#include "dwf/train.hpp"

using namespace dwf;

namespace {
struct Desk {
  ExperimentConfig cfg = parse_config({{"model", {{"preset", "resnet-compact"}}}});
  ExperimentData data = load_experiment_data(cfg.data);
  ModelSpec spec = resolve_model_spec(cfg, data.train);
  TrainingConfig training() const {
    TrainingConfig t = cfg.expert_training;
    t.seed = 21;
    return t;
  }
};

const Desk& desk() {
  static const Desk d;
  return d;
}

const Model& benign_twin() {
  static const Model m = train_benign_expert(desk().data.train, desk().spec, desk().training()).model;
  return m;
}

AttackConfig attack(AttackKind kind, double eps, int iters) {
  AttackConfig a = desk().cfg.attack;
  a.kind = kind;
  a.epsilon = eps;
  a.iterations = iters;
  return a;
}
}  // namespace

TEST_CASE("benign training memorizes the training set") {
  const double train_acc = standard_accuracy(benign_twin(), desk().data.train);
  MESSAGE("benign train accuracy " << 100 * train_acc << "%");
  CHECK(train_acc == 1.0);
}

TEST_CASE("fgsm expert beats its benign twin under FGSM") {
  const Model f = train_fgsm_expert(desk().data.train, desk().spec, desk().training()).model;
  const AttackConfig a = attack(AttackKind::fgsm, 0.05, 1);
  const double ra_f = robust_accuracy(f, desk().data.test, a);
  const double ra_b = robust_accuracy(benign_twin(), desk().data.test, a);
  MESSAGE("RA(FGSM 0.05): fgsm expert " << 100 * ra_f << "%, benign twin " << 100 * ra_b << "%");
  CHECK(ra_f >= ra_b + 0.15);
}

TEST_CASE("pgd expert beats its benign twin under PGD-10") {
  const Model p = train_pgd_expert(desk().data.train, desk().spec, desk().training()).model;
  const AttackConfig a = attack(AttackKind::pgd, 8.0 / 255.0, 10);
  const double ra_p = robust_accuracy(p, desk().data.test, a);
  const double ra_b = robust_accuracy(benign_twin(), desk().data.test, a);
  MESSAGE("RA(PGD-10): pgd expert " << 100 * ra_p << "%, benign twin " << 100 * ra_b << "%");
  CHECK(ra_p >= ra_b + 0.15);
}
