// SPDX-License-Identifier: Apache-2.0
#include "dwf/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dwf/checkpoint.hpp"
#include "dwf/config.hpp"
#include "dwf/eval.hpp"
#include "dwf/gradcheck.hpp"
#include "dwf/train.hpp"

namespace dwf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string data;
  std::string out = "dwf-out";
};

ExperimentConfig resolve_config(const GlobalOptions& g, bool required) {
  if (required && g.config.empty()) throw CLI::RequiredError("--config");
  json doc = g.config.empty() ? json::object() : read_config_file(g.config);
  for (const std::string& o : g.overrides) apply_override(doc, o);
  if (g.seed_set) apply_override(doc, "training.seed=" + std::to_string(g.seed));
  if (!g.data.empty()) apply_override(doc, "data.source=" + json(g.data).dump());
  return parse_config(doc);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

std::string trace_csv(const TrainingTrace& trace) {
  std::ostringstream out;
  out << "epoch,loss,accuracy\n";
  for (std::size_t e = 0; e < trace.epoch_loss.size(); ++e) {
    out << e << ',' << trace.epoch_loss[e] << ',' << trace.epoch_accuracy[e] << '\n';
  }
  return out.str();
}

json training_meta(const ExperimentConfig& cfg) { return config_to_json(cfg)["training"]; }

int cmd_train_expert(const GlobalOptions& g, const std::string& kind, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(g, true);
  const ExpertRole role = parse_expert_role(kind);
  const ExperimentData data = load_experiment_data(cfg.data);
  const ModelSpec spec = resolve_model_spec(cfg, data.train);
  const ExpertResult r = train_expert(role, data.train, spec, cfg.expert_training);
  const fs::path dir = g.out;
  save_checkpoint(r.model, dir,
                  {{"role", kind}, {"seed", cfg.seed}, {"data", cfg.data.source}, {"training", training_meta(cfg)}});
  write_text(dir / "trace.csv", trace_csv(r.trace));
  write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  out << kind << " expert: train accuracy " << r.trace.epoch_accuracy.back() << ", test SA "
      << standard_accuracy(r.model, data.test, cfg.eval.batch_size) << ", saved to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train_moe(const GlobalOptions& g, const std::vector<std::string>& expert_dirs, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(g, true);
  const ExperimentData data = load_experiment_data(cfg.data);
  const fs::path dir = g.out;
  MixtureOfExperts trained;
  TrainingTrace trace;
  if (expert_dirs.empty()) {
    PipelineConfig pc;
    pc.expert_spec = resolve_model_spec(cfg, data.train);
    pc.benign_experts = cfg.benign_experts;
    pc.fgsm_experts = cfg.fgsm_experts;
    pc.pgd_experts = cfg.pgd_experts;
    pc.expert_training = cfg.expert_training;
    pc.moe_training = cfg.moe_training;
    PipelineResult r = run_pipeline(data.train, pc, cfg.seed);
    for (std::size_t i = 0; i < r.pretrained.size(); ++i) {
      save_checkpoint(r.pretrained[i], dir / "experts" / ("expert" + std::to_string(i)),
                      {{"role", to_string(r.roles[i])}, {"seed", cfg.seed}, {"data", cfg.data.source}});
    }
    trained = std::move(r.moe);
    trace = std::move(r.trace);
  } else {
    std::vector<Model> experts;
    std::vector<ExpertRole> roles;
    for (const std::string& d : expert_dirs) {
      LoadedCheckpoint c = load_checkpoint(d);
      if (c.is_moe()) throw DataError("checkpoint " + d + " is a mixture, expected an expert");
      const std::string role = c.metadata.value("role", "");
      if (role.empty()) throw DataError("checkpoint field 'metadata.role' missing in " + d);
      roles.push_back(parse_expert_role(role));
      experts.push_back(std::get<Model>(std::move(c.object)));
    }
    const ModelSpec& s = experts.front().spec();
    const ModelSpec gate_spec = default_gate_spec(s.input_shape, experts.size(), s.mean, s.std);
    MixtureOfExperts moe =
        assemble_moe(std::move(experts), std::move(roles), gate_spec, derive_seed(cfg.seed, "gate"));
    TrainingConfig t = cfg.moe_training;
    t.seed = derive_seed(cfg.seed, "end-to-end");
    MoeResult r = train_end_to_end(std::move(moe), data.train, t);
    trained = std::move(r.moe);
    trace = std::move(r.trace);
  }
  save_checkpoint(trained, dir / "moe", {{"seed", cfg.seed}, {"data", cfg.data.source}, {"training", training_meta(cfg)}});
  write_text(dir / "trace.csv", trace_csv(trace));
  write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  out << "mixture of " << trained.size() << " experts: test SA "
      << standard_accuracy(trained, data.test, cfg.eval.batch_size) << ", saved to " << (dir / "moe").string()
      << '\n';
  return kExitOk;
}

int cmd_report(const GlobalOptions& g, const std::string& checkpoint, bool full_grid, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(g, false);
  const ExperimentData data = load_experiment_data(cfg.data);
  const LoadedCheckpoint c = load_checkpoint(checkpoint);
  AttackConfig atk = cfg.attack;
  if (!full_grid) {
    atk.epsilon_grid = {atk.epsilon};
    atk.iteration_grid = {atk.iterations};
  }
  const std::string id = cfg.eval.model_id.empty() ? fs::path(checkpoint).filename().string() : cfg.eval.model_id;
  const EvalReport report = sweep(c.classifier(), data.test, atk, id, cfg.seed, cfg.eval.batch_size);
  const std::string csv = render_csv(report);
  write_text(fs::path(g.out) / (full_grid ? "sweep.csv" : "report.csv"), csv);
  out << csv;
  return kExitOk;
}

int cmd_stats(const GlobalOptions& g, const std::vector<std::string>& files, std::ostream& out) {
  std::vector<EvalReport> reports;
  for (const std::string& f : files) {
    std::ifstream in(f);
    if (!in) throw DataError("cannot read report " + f);
    std::stringstream text;
    text << in.rdbuf();
    for (EvalReport& r : parse_csv(text.str())) reports.push_back(std::move(r));
  }
  const std::string csv = render_stats_csv(multi_run_stats(reports));
  write_text(fs::path(g.out) / "stats.csv", csv);
  out << csv;
  return kExitOk;
}

int cmd_gradcheck(std::size_t nets, std::uint64_t seed, std::ostream& out) {
  const GradCheckSuiteResult r = run_gradcheck_suite(nets, seed);
  const bool ok = r.worst.max_rel_error < 1e-4;
  out << "gradcheck: " << r.networks << " networks, " << r.coordinates << " coordinates compared, " << r.skipped
      << " skipped at relu boundaries, max relative error " << r.worst.max_rel_error << " (network "
      << r.worst_network << ", " << r.worst.worst_tensor << "[" << r.worst.worst_index << "]) "
      << (ok ? "ok" : "FAILED") << '\n';
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial-defense mixture of experts: training, attacks and evaluation", "dwf"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--set", g.overrides, "Override a config key, e.g. training.expert.epochs=5");
  auto* seed_opt = app.add_option("--seed", g.seed, "Master seed (training.seed)");
  app.add_option("--data", g.data, "Data source: CIFAR-10 directory or synth:<kind>[:n=..,test=..,classes=..,side=..,seed=..]");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  std::string kind;
  auto* train_expert = app.add_subcommand("train-expert", "Pretrain one benign, FGSM or PGD expert");
  train_expert->add_option("--kind", kind, "benign, fgsm or pgd")->required()->check(CLI::IsMember({"benign", "fgsm", "pgd"}));

  std::vector<std::string> expert_dirs;
  auto* train_moe = app.add_subcommand("train-moe", "Pretrain experts (or load them), assemble and train end to end");
  train_moe->add_option("--experts", expert_dirs, "Pretrained expert checkpoints to assemble instead of pretraining");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "SA and RA at the configured attack settings");
  eval->add_option("--checkpoint", checkpoint, "Model or mixture checkpoint")->required();
  auto* sweep_cmd = app.add_subcommand("sweep", "SA and RA over the FGSM epsilon and PGD iteration grids");
  sweep_cmd->add_option("--checkpoint", checkpoint, "Model or mixture checkpoint")->required();

  std::vector<std::string> report_files;
  auto* stats = app.add_subcommand("stats", "Aggregate sweep reports of several runs");
  stats->add_option("reports", report_files, "Report CSV files")->required()->check(CLI::ExistingFile);

  std::size_t nets = 100;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of backward() on random networks");
  gradcheck->add_option("--nets", nets, "Number of random networks")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    g.seed_set = seed_opt->count() > 0;
    if (*train_expert) return cmd_train_expert(g, kind, out);
    if (*train_moe) return cmd_train_moe(g, expert_dirs, out);
    if (*eval) return cmd_report(g, checkpoint, false, out);
    if (*sweep_cmd) return cmd_report(g, checkpoint, true, out);
    if (*stats) return cmd_stats(g, report_files, out);
    if (*gradcheck) return cmd_gradcheck(nets, g.seed_set ? g.seed : 1, out);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace dwf
