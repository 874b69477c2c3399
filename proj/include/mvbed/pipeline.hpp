// End-to-end experiment stages shared by the command-line tool and the
// acceptance checks. Each stage draws from its own labelled substream of the
// run seed, so stages can be rerun in isolation with identical results.

#pragma once

#include "mvbed/config.hpp"
#include "mvbed/io.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mvbed {

inline constexpr const char* kOursMethod = "ours";

Provenance make_provenance(const ExperimentConfig& cfg, std::uint64_t seed);

// "ucb:1" -> "ucb_1"; used in output file names.
std::string method_slug(const std::string& method);

struct TrainedDesign {
  DesignDocument design;
  SeparableCritic critic;
  TrainLog log;
};

TrainedDesign train_ours(const ExperimentConfig& cfg, std::uint64_t seed);

DesignDocument make_baseline(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& method);

// Throws ConfigError when the design was produced for another model or context grid.
void check_design_matches(const ExperimentConfig& cfg, const DesignDocument& design);

// With `joint` set, evaluates that critic on the design; otherwise trains a
// fresh critic against the fixed design first.
EigDocument estimate_eig(const ExperimentConfig& cfg, std::uint64_t seed, const DesignDocument& design,
                         const SeparableCritic* joint = nullptr);

struct DeployResult {
  MethodMetrics metrics;
  std::vector<RealisationMetrics> realisations;
};

// Realisations share the run's "deploy" stream, so every method faces the same
// ground-truth environments.
DeployResult deploy_eval(const ExperimentConfig& cfg, std::uint64_t seed, const DesignDocument& design,
                         unsigned workers, const EigDocument* eig = nullptr);

struct ExperimentResult {
  TrainedDesign ours;
  std::vector<DesignDocument> designs;  // ours first, then baselines in config order
  std::vector<EigDocument> eig;
  std::vector<DeployResult> deploy;
};

// Train, build baselines, estimate EIG and deploy every method. When `out`
// is given, all intermediate and final files are written there.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, unsigned workers,
                                const std::optional<std::filesystem::path>& out = std::nullopt);

// File-writing stages used by the CLI and run_experiment.
void write_trained(const std::filesystem::path& out, const TrainedDesign& t);
std::filesystem::path design_path(const std::filesystem::path& out, const std::string& method);
std::filesystem::path eig_path(const std::filesystem::path& out, const std::string& method);
void write_metrics(const std::filesystem::path& out, const std::vector<MethodMetrics>& rows, const Provenance& p);

}  // namespace mvbed
