// File formats: design, training-log, critic-checkpoint and EIG documents
// (JSON), metric tables (CSV and JSON) and design plots (SVG).
//
// Every document carries a Provenance block. Writes go to a temporary file
// in the target directory and are renamed into place.

#pragma once

#include "mvbed/critic.hpp"
#include "mvbed/deployment.hpp"
#include "mvbed/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <limits>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mvbed {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string tool_version();

struct Provenance {
  std::string tool_version;
  std::string config_hash;
  std::string model_hash;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static Provenance from_json(const nlohmann::json& j);
};

// Shortest decimal that round-trips; "nan"/"inf" for non-finite values.
std::string format_double(double x);

void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
// Pretty-printed with a trailing newline.
std::string dump_json(const nlohmann::json& j);

// Discrete designs hold 0-based treatments in memory and 1-based on disk.
using AnyDesign = std::variant<std::vector<int>, Vector>;

struct DesignDocument {
  Provenance provenance;
  std::string method;  // "ours", "random", "ucb:1", ...
  std::string model;   // "discrete" | "continuous"
  Vector contexts;
  AnyDesign design;
  std::optional<Matrix> logits;   // trained discrete policy
  std::string critic_checkpoint;  // file name beside the design, for trained designs

  nlohmann::json to_json() const;
  static DesignDocument from_json(const nlohmann::json& j);
};

nlohmann::json train_log_json(const TrainLog& log, const Provenance& p);

nlohmann::json critic_to_json(const SeparableCritic& critic, const Provenance& p);
SeparableCritic critic_from_json(const nlohmann::json& j);

struct EigDocument {
  Provenance provenance;
  std::string method;
  std::string critic;  // "joint" (critic trained with the designs) or "fresh"
  BoundEstimate estimate;

  nlohmann::json to_json() const;
  static EigDocument from_json(const nlohmann::json& j);
};

struct MethodMetrics {
  std::string method;
  double eig_mean = std::numeric_limits<double>::quiet_NaN();
  double eig_se = std::numeric_limits<double>::quiet_NaN();
  MetricSummary summary;
  std::uint64_t seed = 0;
};

// CSV column order of the metrics table.
const std::vector<std::string>& metrics_columns();

std::string metrics_csv(const std::vector<MethodMetrics>& rows, const Provenance& p);
nlohmann::json metrics_json(const std::vector<MethodMetrics>& rows, const Provenance& p);

// A parsed metrics CSV: provenance comment plus raw data rows.
struct MetricsTable {
  Provenance provenance;
  std::vector<std::vector<std::string>> rows;
};

MetricsTable parse_metrics_csv(const std::string& text);
std::string merge_metrics_csv(const std::vector<MetricsTable>& tables);

// Scatter of treatments against contexts, one marker per design entry.
std::string design_svg(const DesignDocument& doc);

}  // namespace mvbed
