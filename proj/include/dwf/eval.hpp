// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dwf/attacks.hpp"
#include "dwf/data.hpp"

namespace dwf {

/// Number of samples whose argmax logit (lowest index on ties) equals the
/// label. Throws DataError on an empty dataset and std::invalid_argument on
/// a class-count mismatch.
std::size_t count_correct(const Classifier& model, const Dataset& ds, std::size_t batch_size = 256);

double standard_accuracy(const Classifier& model, const Dataset& ds, std::size_t batch_size = 256);

/// Correct predictions on run_attack(model, x, y, atk) per batch; the
/// attack targets the evaluated model itself.
std::size_t count_robust(const Classifier& model, const Dataset& ds, const AttackConfig& atk,
                         std::size_t batch_size = 256, Rng* start_rng = nullptr);

double robust_accuracy(const Classifier& model, const Dataset& ds, const AttackConfig& atk,
                       std::size_t batch_size = 256, Rng* start_rng = nullptr);

/// Accuracies are held as exact correct counts out of n_test.
struct EvalReport {
  std::string model_id;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
  std::size_t sa_correct = 0;
  std::map<double, std::size_t> fgsm_correct;
  std::map<int, std::size_t> pgd_correct;

  double sa() const;
  double ra_fgsm(double epsilon) const;
  double ra_pgd(int iterations) const;
  /// 1 + |fgsm grid| + |pgd grid|.
  std::size_t entries() const { return 1 + fgsm_correct.size() + pgd_correct.size(); }

  bool operator==(const EvalReport&) const = default;
};

/// SA plus RA at every FGSM ε in atk.epsilon_grid and every PGD iteration
/// count in atk.iteration_grid (PGD uses atk.epsilon and atk.alpha).
EvalReport sweep(const Classifier& model, const Dataset& ds, const AttackConfig& atk, const std::string& model_id,
                 std::uint64_t seed, std::size_t batch_size = 256);

inline constexpr const char* kReportHeader = "model,metric,setting,accuracy";

/// CSV with header kReportHeader. Accuracies are percentages with two
/// decimals; rows "n_test" and "seed" carry the sample count and seed so
/// that counts are recovered exactly for n_test ≤ 10000.
std::string render_csv(const std::vector<EvalReport>& reports);
std::string render_csv(const EvalReport& report);
/// Inverse of render_csv. Throws DataError on malformed input.
std::vector<EvalReport> parse_csv(const std::string& text);

struct PointStatistics {
  std::string metric;
  std::string setting;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct RunStatistics {
  std::size_t runs = 0;
  std::vector<PointStatistics> points;
};

/// Order statistics (quartiles by linear interpolation) and mean/sample
/// standard deviation of the accuracies at each grid point. Requires at
/// least two reports on identical grids.
RunStatistics multi_run_stats(const std::vector<EvalReport>& reports);

/// metric,setting,runs,min,q1,median,q3,max,mean,stddev in percent.
std::string render_stats_csv(const RunStatistics& stats);

std::string format_setting(double epsilon);

}  // namespace dwf
