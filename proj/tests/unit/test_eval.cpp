// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "dwf/eval.hpp"
#include "helpers.hpp"

using namespace dwf;
using dwf::testing::linear_model;
using dwf::testing::tiny_cnn_spec;

namespace {
Dataset labelled(std::vector<int> labels, std::size_t classes) {
  Dataset ds;
  ds.images = Tensor({labels.size(), 1, 1, 1}, 0.5);
  ds.labels = std::move(labels);
  ds.num_classes = classes;
  return ds;
}

EvalReport sample_report(std::size_t sa, std::uint64_t seed, std::string id = "m") {
  EvalReport r;
  r.model_id = std::move(id);
  r.n_test = 500;
  r.seed = seed;
  r.sa_correct = sa;
  r.fgsm_correct = {{0.01, 400}, {0.03, 250}};
  r.pgd_correct = {{10, 100}};
  return r;
}
}  // namespace

TEST_CASE("accuracy counting") {
  std::vector<int> labels(10, 0);
  labels[3] = 1;
  const Model zero = linear_model({1, 1, 1}, 2, {0.0, 0.0});
  CHECK(standard_accuracy(zero, labelled(labels, 2), 4) == 0.9);
  std::vector<int> balanced;
  for (int i = 0; i < 100; ++i) balanced.push_back(i % 10);
  // Constant logits: ties resolve to class 0.
  CHECK(standard_accuracy(linear_model({1, 1, 1}, 10, std::vector<double>(10, 0.0)), labelled(balanced, 10)) == 0.1);
  Dataset empty;
  empty.num_classes = 2;
  CHECK_THROWS_AS(count_correct(zero, empty), DataError);
  CHECK_THROWS_AS(count_correct(zero, labelled({0, 1, 2}, 3)), std::invalid_argument);
}

TEST_CASE("zero-budget attacks leave accuracy unchanged") {
  const Dataset ds = synth_dataset(SynthKind::gaussian_blobs, 60, 2, 8, 2);
  const Model m = build_model(tiny_cnn_spec(), 3);
  AttackConfig atk;
  atk.kind = AttackKind::fgsm;
  atk.epsilon = 0.0;
  CHECK(count_robust(m, ds, atk, 16) == count_correct(m, ds, 16));
}

TEST_CASE("sweep entry counts") {
  const Dataset ds = synth_dataset(SynthKind::gaussian_blobs, 20, 2, 8, 2);
  const Model m = build_model(tiny_cnn_spec(), 3);
  AttackConfig atk;
  atk.iteration_grid = {1, 2, 3, 4, 5};
  const EvalReport full = sweep(m, ds, atk, "x", 1);
  CHECK(full.entries() == 15);
  atk.epsilon_grid = {0.03};
  atk.iteration_grid = {2};
  const EvalReport single = sweep(m, ds, atk, "x", 1);
  CHECK(single.entries() == 3);
  CHECK(single.ra_fgsm(0.03) == full.ra_fgsm(0.03));
  CHECK(single == sweep(m, ds, atk, "x", 1));
}

TEST_CASE("report CSV round trip") {
  const std::vector<EvalReport> reports{sample_report(480, 1), sample_report(470, 2, "n")};
  const std::string csv = render_csv(reports);
  CHECK(csv.rfind("model,metric,setting,accuracy\n", 0) == 0);
  CHECK(csv.find("m,SA,clean,96.00\n") != std::string::npos);
  CHECK(csv.find("m,FGSM,0.03,50.00\n") != std::string::npos);
  CHECK(csv.find("m,PGD,10,20.00\n") != std::string::npos);
  CHECK(parse_csv(csv) == reports);
  CHECK_THROWS_AS(parse_csv("nope\n"), DataError);
  CHECK_THROWS_AS(parse_csv(std::string(kReportHeader) + "\nm,SA,clean,abc\n"), DataError);
}

TEST_CASE("multi-run statistics") {
  const EvalReport a = sample_report(200, 1), b = sample_report(300, 2);
  const RunStatistics s = multi_run_stats({a, b});
  CHECK(s.runs == 2);
  const PointStatistics& sa = s.points.front();
  CHECK(sa.metric == "SA");
  CHECK(sa.mean == doctest::Approx(0.5));
  CHECK(sa.median == doctest::Approx(0.5));
  CHECK(sa.min == doctest::Approx(0.4));
  CHECK(sa.max == doctest::Approx(0.6));
  const RunStatistics same = multi_run_stats({a, a, a});
  for (const PointStatistics& p : same.points) {
    CHECK(p.stddev == 0.0);
    CHECK(p.min == p.max);
  }
  EvalReport c = a;
  c.pgd_correct[20] = 1;
  CHECK_THROWS(multi_run_stats({a, c}));
  CHECK_THROWS(multi_run_stats({a}));
  CHECK(render_stats_csv(s).rfind("metric,setting,runs,min,q1,median,q3,max,mean,stddev\n", 0) == 0);
}
