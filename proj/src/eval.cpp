// SPDX-License-Identifier: Apache-2.0
#include "dwf/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dwf/ops.hpp"

namespace dwf {

namespace {

void check_eval_inputs(const Classifier& model, const Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) throw DataError("evaluation: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluation: batch_size must be positive");
  if (ds.num_classes != model.num_classes()) {
    throw std::invalid_argument("evaluation: dataset has " + std::to_string(ds.num_classes) + " classes, model has " +
                                std::to_string(model.num_classes()));
  }
}

std::size_t correct_in(const Tensor& logits, std::span<const int> y) {
  const auto pred = ops::argmax_rows(logits);
  std::size_t c = 0;
  for (std::size_t i = 0; i < y.size(); ++i) c += pred[i] == static_cast<std::size_t>(y[i]);
  return c;
}

template <typename Fn>
std::size_t count_batches(const Dataset& ds, std::size_t batch_size, Fn&& fn) {
  const BatchPlan plan{batch_size, false, 0, false};
  std::size_t correct = 0;
  for (const Batch& b : make_batches(ds, plan, 0)) correct += fn(b);
  return correct;
}

double fraction(std::size_t count, std::size_t n) { return static_cast<double>(count) / static_cast<double>(n); }

}  // namespace

std::size_t count_correct(const Classifier& model, const Dataset& ds, std::size_t batch_size) {
  check_eval_inputs(model, ds, batch_size);
  return count_batches(ds, batch_size, [&](const Batch& b) { return correct_in(model.logits(b.x), b.y); });
}

double standard_accuracy(const Classifier& model, const Dataset& ds, std::size_t batch_size) {
  return fraction(count_correct(model, ds, batch_size), ds.size());
}

std::size_t count_robust(const Classifier& model, const Dataset& ds, const AttackConfig& atk, std::size_t batch_size,
                         Rng* start_rng) {
  check_eval_inputs(model, ds, batch_size);
  return count_batches(ds, batch_size, [&](const Batch& b) {
    const AdversarialBatch adv = run_attack(model, b.x, b.y, atk, start_rng);
    return correct_in(model.logits(adv.x_adv), b.y);
  });
}

double robust_accuracy(const Classifier& model, const Dataset& ds, const AttackConfig& atk, std::size_t batch_size,
                       Rng* start_rng) {
  return fraction(count_robust(model, ds, atk, batch_size, start_rng), ds.size());
}

double EvalReport::sa() const { return fraction(sa_correct, n_test); }

double EvalReport::ra_fgsm(double epsilon) const {
  auto it = fgsm_correct.find(epsilon);
  if (it == fgsm_correct.end()) throw std::out_of_range("report has no FGSM entry for epsilon " + format_setting(epsilon));
  return fraction(it->second, n_test);
}

double EvalReport::ra_pgd(int iterations) const {
  auto it = pgd_correct.find(iterations);
  if (it == pgd_correct.end()) {
    throw std::out_of_range("report has no PGD entry for " + std::to_string(iterations) + " iterations");
  }
  return fraction(it->second, n_test);
}

EvalReport sweep(const Classifier& model, const Dataset& ds, const AttackConfig& atk, const std::string& model_id,
                 std::uint64_t seed, std::size_t batch_size) {
  if (atk.epsilon_grid.empty() || atk.iteration_grid.empty()) throw std::invalid_argument("sweep: empty attack grid");
  EvalReport r;
  r.model_id = model_id;
  r.n_test = ds.size();
  r.seed = seed;
  r.sa_correct = count_correct(model, ds, batch_size);
  AttackConfig cfg = atk;
  cfg.kind = AttackKind::fgsm;
  for (double eps : atk.epsilon_grid) {
    cfg.epsilon = eps;
    r.fgsm_correct[eps] = count_robust(model, ds, cfg, batch_size);
  }
  cfg = atk;
  cfg.kind = AttackKind::pgd;
  Rng start(derive_seed(seed, "pgd-start"));
  for (int iters : atk.iteration_grid) {
    cfg.iterations = iters;
    r.pgd_correct[iters] = count_robust(model, ds, cfg, batch_size, &start);
  }
  return r;
}

std::string format_setting(double epsilon) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, epsilon);
  return std::string(buf, res.ptr);
}

namespace {

std::string percent(std::size_t count, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction(count, n));
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line_no, const char* what) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("report line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
  return v;
}

std::size_t count_from_percent(const std::string& s, std::size_t n, std::size_t line_no) {
  const double pct = parse_number<double>(s, line_no, "accuracy");
  if (!(pct >= 0.0 && pct <= 100.0)) {
    throw DataError("report line " + std::to_string(line_no) + ": accuracy " + s + " outside [0, 100]");
  }
  return static_cast<std::size_t>(std::llround(pct / 100.0 * static_cast<double>(n)));
}

}  // namespace

std::string render_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << kReportHeader << '\n';
  for (const EvalReport& r : reports) {
    if (r.n_test == 0) throw std::invalid_argument("render_csv: report '" + r.model_id + "' has n_test = 0");
    out << r.model_id << ",n_test,-," << r.n_test << '\n';
    out << r.model_id << ",seed,-," << r.seed << '\n';
    out << r.model_id << ",SA,clean," << percent(r.sa_correct, r.n_test) << '\n';
    for (const auto& [eps, c] : r.fgsm_correct) {
      out << r.model_id << ",FGSM," << format_setting(eps) << ',' << percent(c, r.n_test) << '\n';
    }
    for (const auto& [it, c] : r.pgd_correct) {
      out << r.model_id << ",PGD," << it << ',' << percent(c, r.n_test) << '\n';
    }
  }
  return out.str();
}

std::string render_csv(const EvalReport& report) { return render_csv(std::vector<EvalReport>{report}); }

std::vector<EvalReport> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw DataError(std::string("report: header must be '") + kReportHeader + "'");
  }
  std::vector<EvalReport> reports;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw DataError("report line " + std::to_string(line_no) + ": expected 4 fields");
    const std::string& id = f[0];
    const std::string& metric = f[1];
    if (reports.empty() || reports.back().model_id != id) {
      if (metric != "n_test") {
        throw DataError("report line " + std::to_string(line_no) + ": model '" + id + "' must start with n_test");
      }
      EvalReport r;
      r.model_id = id;
      r.n_test = parse_number<std::size_t>(f[3], line_no, "n_test");
      if (r.n_test == 0) throw DataError("report line " + std::to_string(line_no) + ": n_test must be positive");
      reports.push_back(std::move(r));
      continue;
    }
    EvalReport& r = reports.back();
    if (metric == "seed") {
      r.seed = parse_number<std::uint64_t>(f[3], line_no, "seed");
    } else if (metric == "SA") {
      r.sa_correct = count_from_percent(f[3], r.n_test, line_no);
    } else if (metric == "FGSM") {
      r.fgsm_correct[parse_number<double>(f[2], line_no, "epsilon")] = count_from_percent(f[3], r.n_test, line_no);
    } else if (metric == "PGD") {
      r.pgd_correct[parse_number<int>(f[2], line_no, "iterations")] = count_from_percent(f[3], r.n_test, line_no);
    } else {
      throw DataError("report line " + std::to_string(line_no) + ": unknown metric '" + metric + "'");
    }
  }
  return reports;
}

namespace {

double quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

PointStatistics summarize(std::string metric, std::string setting, std::vector<double> v) {
  std::sort(v.begin(), v.end());
  PointStatistics s;
  s.metric = std::move(metric);
  s.setting = std::move(setting);
  s.min = v.front();
  s.max = v.back();
  s.q1 = quantile(v, 0.25);
  s.median = quantile(v, 0.5);
  s.q3 = quantile(v, 0.75);
  const double n = static_cast<double>(v.size());
  // Shifted by the minimum so that identical runs give exactly zero spread.
  double shifted = 0.0;
  for (double x : v) shifted += x - s.min;
  s.mean = s.min + shifted / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / (n - 1.0));
  return s;
}

template <typename K>
bool same_keys(const std::map<K, std::size_t>& a, const std::map<K, std::size_t>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) {
           return x.first == y.first;
         });
}

}  // namespace

RunStatistics multi_run_stats(const std::vector<EvalReport>& reports) {
  if (reports.size() < 2) throw std::invalid_argument("multi_run_stats: need at least two reports");
  const EvalReport& ref = reports.front();
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (!same_keys(reports[i].fgsm_correct, ref.fgsm_correct) || !same_keys(reports[i].pgd_correct, ref.pgd_correct)) {
      throw std::invalid_argument("multi_run_stats: report '" + reports[i].model_id + "' uses a different grid than '" +
                                  ref.model_id + "'");
    }
  }
  RunStatistics out;
  out.runs = reports.size();
  auto collect = [&](auto&& get) {
    std::vector<double> v;
    for (const EvalReport& r : reports) v.push_back(get(r));
    return v;
  };
  out.points.push_back(summarize("SA", "clean", collect([](const EvalReport& r) { return r.sa(); })));
  for (const auto& [eps, c] : ref.fgsm_correct) {
    out.points.push_back(summarize("FGSM", format_setting(eps), collect([&](const EvalReport& r) {
                                     return r.ra_fgsm(eps);
                                   })));
  }
  for (const auto& [it, c] : ref.pgd_correct) {
    out.points.push_back(
        summarize("PGD", std::to_string(it), collect([&](const EvalReport& r) { return r.ra_pgd(it); })));
  }
  return out;
}

std::string render_stats_csv(const RunStatistics& stats) {
  std::ostringstream out;
  out << "metric,setting,runs,min,q1,median,q3,max,mean,stddev\n";
  char buf[256];
  for (const PointStatistics& p : stats.points) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", p.metric.c_str(),
                  p.setting.c_str(), stats.runs, 100 * p.min, 100 * p.q1, 100 * p.median, 100 * p.q3, 100 * p.max,
                  100 * p.mean, 100 * p.stddev);
    out << buf;
  }
  return out.str();
}

}  // namespace dwf
