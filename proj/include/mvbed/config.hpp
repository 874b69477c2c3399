// Experiment configuration: JSON parsing, validation and content hashing.
//
// A config file describes one experiment. Its optional "scale" object holds
// named JSON merge patches ("desk", "paper") applied on top of the base
// before validation; "default_scale" picks one when the caller does not.

#pragma once

#include "mvbed/baselines.hpp"
#include "mvbed/critic.hpp"
#include "mvbed/deployment.hpp"
#include "mvbed/models.hpp"
#include "mvbed/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvbed {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ModelKind { Discrete, Continuous };

std::string model_kind_name(ModelKind kind);

struct ContextConfig {
  enum class Layout { Negated, Midpoint };
  Layout layout = Layout::Negated;
  double start = -3.0;
  double stop = -1.0;
  Index count = 10;

  ContextPair build() const;
};

struct EigConfig {
  long critic_steps = 5000;  // fresh-critic training for fixed designs
  Index eval_batches = 50;
};

struct ExperimentConfig {
  std::string name;
  std::string scale;  // applied scale patch, empty when none
  ModelKind model = ModelKind::Discrete;
  DiscreteQuadraticModel::Options discrete;
  ContinuousBumpModel::Options continuous;
  ContextConfig contexts;
  CriticPreset critic = CriticPreset::Discrete;  // follows the model kind
  TrainConfig train;
  EigConfig eig;
  std::vector<std::string> baselines;
  Index ucb_mc_samples = 512;
  Index ucb_grid_points = 201;
  DeployConfig deploy;
  std::uint64_t seed = 0;

  // Effective config after the scale patch, with "scale" removed.
  nlohmann::json effective;

  // FNV-1a of the canonical effective config without the seed, 16 hex digits.
  std::string config_hash() const;
  // Hash of the model and context sections only; outputs from runs with
  // different hashes describe different experiments.
  std::string model_hash() const;

  TrainConfig fixed_design_train() const;
  BaselineSpec baseline_spec(const std::string& method) const;
};

// `scale` overrides "default_scale"; pass std::nullopt to use the default.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::optional<std::string>& scale = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path, const std::optional<std::string>& scale = std::nullopt);

std::string hash_hex(std::uint64_t h);

}  // namespace mvbed
