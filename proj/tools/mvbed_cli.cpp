// mvbed: train experimental designs, build baselines, estimate EIG, run the
// simulated deployment and report.
//
// Exit codes: 0 success, 2 usage/config/input error, 3 numerical failure.

#include "mvbed/pipeline.hpp"
#include "mvbed/runtime.hpp"
#include "mvbed/selftest.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mvbed;

namespace {

constexpr int kUsageError = 2;
constexpr int kNumericalError = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  unsigned workers = 1;
  bool desk = false;
  bool paper = false;

  ExperimentConfig load() const {
    std::optional<std::string> scale;
    if (desk) scale = "desk";
    if (paper) scale = "paper";
    return load_config(config, scale);
  }
  std::uint64_t seed_for(const ExperimentConfig& cfg) const { return seed.value_or(cfg.seed); }
};

void add_common(CLI::App* cmd, Common& c, bool workers) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Run seed (defaults to the config's seed)");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  if (workers) cmd->add_option("--workers", c.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  auto* desk = cmd->add_flag("--desk", c.desk, "Use the desk-scale variant");
  cmd->add_flag("--paper", c.paper, "Use the paper-scale variant")->excludes(desk);
}

DesignDocument load_design(const std::string& path) { return DesignDocument::from_json(read_json(path)); }

void log(const std::string& msg) { std::cerr << "[mvbed] " << msg << "\n"; }

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = c.load();
  const std::uint64_t seed = c.seed_for(cfg);
  log("training designs (" + std::to_string(cfg.train.steps) + " steps, batch " + std::to_string(cfg.train.batch_size) +
      ")");
  const TrainedDesign t = train_ours(cfg, seed);
  write_trained(c.out, t);
  log("wrote " + design_path(c.out, t.design.method).string());
  return 0;
}

int cmd_baseline(const Common& c, const std::string& method) {
  const ExperimentConfig cfg = c.load();
  const DesignDocument doc = make_baseline(cfg, c.seed_for(cfg), method);
  const fs::path path = design_path(c.out, method);
  write_file_atomic(path, dump_json(doc.to_json()));
  log("wrote " + path.string());
  return 0;
}

int cmd_eig(const Common& c, const std::string& design_file, bool fresh) {
  const ExperimentConfig cfg = c.load();
  const DesignDocument design = load_design(design_file);
  std::optional<SeparableCritic> joint;
  if (!fresh && !design.critic_checkpoint.empty()) {
    const fs::path ckpt = fs::path(design_file).parent_path() / design.critic_checkpoint;
    if (!fs::exists(ckpt)) throw std::invalid_argument("critic checkpoint '" + ckpt.string() + "' not found");
    joint = critic_from_json(read_json(ckpt));
  }
  const EigDocument doc = estimate_eig(cfg, c.seed_for(cfg), design, joint ? &*joint : nullptr);
  const fs::path path = eig_path(c.out, design.method);
  write_file_atomic(path, dump_json(doc.to_json()));
  log("wrote " + path.string() + " (eig " + format_double(doc.estimate.mean) + ")");
  return 0;
}

int cmd_deploy(const Common& c, const std::vector<std::string>& designs, const std::vector<std::string>& eigs,
               bool calibration) {
  const ExperimentConfig cfg = c.load();
  const std::uint64_t seed = c.seed_for(cfg);
  std::vector<EigDocument> eig_docs;
  for (const auto& path : eigs) eig_docs.push_back(EigDocument::from_json(read_json(path)));

  std::vector<MethodMetrics> rows;
  for (const auto& path : designs) {
    const DesignDocument design = load_design(path);
    const EigDocument* eig = nullptr;
    for (const auto& e : eig_docs) {
      if (e.method == design.method) eig = &e;
    }
    const DeployResult r = deploy_eval(cfg, seed, design, c.workers, eig);
    rows.push_back(r.metrics);
    if (calibration) {
      write_file_atomic(fs::path(c.out) / ("calibration_" + method_slug(design.method) + ".csv"),
                        calibration_csv(calibration_series(r.realisations)));
    }
    log(design.method + ": regret " + format_double(r.metrics.summary.regret.mean));
  }
  write_metrics(c.out, rows, make_provenance(cfg, seed));
  log("wrote " + (fs::path(c.out) / "metrics.csv").string());
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<MetricsTable> tables;
  for (const auto& in : inputs) {
    const fs::path p = fs::is_directory(in) ? fs::path(in) / "metrics.csv" : fs::path(in);
    if (!fs::exists(p)) throw std::invalid_argument("no metrics table at '" + p.string() + "'");
    tables.push_back(parse_metrics_csv(read_file(p)));
  }
  const fs::path path = fs::path(out) / "report.csv";
  write_file_atomic(path, merge_metrics_csv(tables));
  log("wrote " + path.string());
  return 0;
}

int cmd_plot(const std::string& design_file, const std::string& out) {
  const DesignDocument design = load_design(design_file);
  const fs::path path = fs::path(out) / ("designs_" + method_slug(design.method) + ".svg");
  write_file_atomic(path, design_svg(design));
  log("wrote " + path.string());
  return 0;
}

int cmd_run(const Common& c) {
  const ExperimentConfig cfg = c.load();
  const auto start = std::chrono::steady_clock::now();
  const ExperimentResult r = run_experiment(cfg, c.seed_for(cfg), c.workers, fs::path(c.out));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << metrics_csv([&] {
    std::vector<MethodMetrics> rows;
    for (const auto& d : r.deploy) rows.push_back(d.metrics);
    return rows;
  }(), make_provenance(cfg, c.seed_for(cfg)));
  log("finished in " + format_double(std::round(secs)) + " s");
  return 0;
}

int cmd_selftest(std::uint64_t seed) {
  bool ok = true;
  for (const SelftestCase& t : run_selftest(seed)) {
    std::cout << (t.passed ? "PASS " : "FAIL ") << t.name << ": " << t.detail << "\n";
    ok = ok && t.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Max-value information-gain experimental design"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());

  Common train_opts, base_opts, eig_opts, deploy_opts, run_opts;
  auto* train = app.add_subcommand("train-designs", "Train designs and critic jointly");
  add_common(train, train_opts, false);

  std::string method;
  auto* baseline = app.add_subcommand("make-baseline", "Write a baseline design (random, random:<sd>, ucb:<lambda>)");
  add_common(baseline, base_opts, false);
  baseline->add_option("--method", method, "Baseline method")->required();

  std::string design_file;
  bool fresh = false;
  auto* eig = app.add_subcommand("estimate-eig", "Estimate the max-value EIG of a design file");
  add_common(eig, eig_opts, false);
  eig->add_option("--design", design_file, "Design file")->required()->check(CLI::ExistingFile);
  eig->add_flag("--fresh-critic", fresh, "Train a new critic even when the design ships one");

  std::vector<std::string> designs, eig_files;
  bool calibration = false;
  auto* deploy = app.add_subcommand("deploy-eval", "Simulated deployment metrics for design files");
  add_common(deploy, deploy_opts, true);
  deploy->add_option("--design", designs, "Design files")->required()->check(CLI::ExistingFile);
  deploy->add_option("--eig", eig_files, "EIG files, matched to designs by method")->check(CLI::ExistingFile);
  deploy->add_flag("--calibration", calibration, "Also write per-method calibration series");

  std::vector<std::string> inputs;
  std::string report_out = ".";
  auto* report = app.add_subcommand("report", "Merge metrics tables in input order");
  report->add_option("inputs", inputs, "Run directories or metrics.csv files")->required();
  report->add_option("--out", report_out, "Output directory")->capture_default_str();

  std::string plot_design;
  std::string plot_out = ".";
  auto* plot = app.add_subcommand("plot-designs", "SVG scatter of a design file");
  plot->add_option("--design", plot_design, "Design file")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "Output directory")->capture_default_str();

  auto* run = app.add_subcommand("run", "Train, baselines, EIG and deployment in one go");
  add_common(run, run_opts, true);

  std::uint64_t selftest_seed = 0;
  auto* selftest = app.add_subcommand("selftest", "Run the numerical property suite");
  selftest->add_option("--seed", selftest_seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*train) return cmd_train(train_opts);
    if (*baseline) return cmd_baseline(base_opts, method);
    if (*eig) return cmd_eig(eig_opts, design_file, fresh);
    if (*deploy) return cmd_deploy(deploy_opts, designs, eig_files, calibration);
    if (*report) return cmd_report(inputs, report_out);
    if (*plot) return cmd_plot(plot_design, plot_out);
    if (*run) return cmd_run(run_opts);
    if (*selftest) return cmd_selftest(selftest_seed);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }
  return kUsageError;
}
