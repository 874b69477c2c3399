#include "mvbed/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#ifndef MVBED_VERSION
#define MVBED_VERSION "0.0.0"
#endif

namespace mvbed {

using nlohmann::json;

std::string tool_version() { return MVBED_VERSION; }

json Provenance::to_json() const {
  return json{{"tool_version", tool_version}, {"config_hash", config_hash}, {"model_hash", model_hash}, {"seed", seed}};
}

Provenance Provenance::from_json(const json& j) {
  try {
    Provenance p;
    p.tool_version = j.at("tool_version").get<std::string>();
    p.config_hash = j.at("config_hash").get<std::string>();
    p.model_hash = j.at("model_hash").get<std::string>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("provenance block: ") + e.what());
  }
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

namespace {

json vector_json(const Eigen::Ref<const Vector>& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from(const json& j, const char* what) {
  if (!j.is_array()) throw FormatError(std::string(what) + ": expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw FormatError(std::string(what) + ": non-numeric entry");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

json matrix_json(const Matrix& m) {
  json data = json::array();
  for (Index i = 0; i < m.size(); ++i) data.push_back(m.data()[i]);
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from(const json& j, const std::string& what) {
  const Index rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() || static_cast<Index>(data.size()) != rows * cols) {
    throw FormatError(what + ": data length does not match shape " + shape_string(rows, cols));
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
  return m;
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double number_or_nan(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

json DesignDocument::to_json() const {
  json j{{"provenance", provenance.to_json()}, {"method", method}, {"model", model}, {"contexts", vector_json(contexts)}};
  if (const auto* treatments = std::get_if<std::vector<int>>(&design)) {
    json t = json::array();
    for (int a : *treatments) t.push_back(a + 1);
    j["treatments"] = std::move(t);
  } else {
    j["actions"] = vector_json(std::get<Vector>(design));
  }
  if (logits) j["logits"] = matrix_json(*logits);
  if (!critic_checkpoint.empty()) j["critic_checkpoint"] = critic_checkpoint;
  return j;
}

DesignDocument DesignDocument::from_json(const json& j) {
  try {
    DesignDocument d;
    d.provenance = Provenance::from_json(j.at("provenance"));
    d.method = j.at("method").get<std::string>();
    d.model = j.at("model").get<std::string>();
    d.contexts = vector_from(j.at("contexts"), "contexts");
    if (j.contains("treatments")) {
      std::vector<int> t;
      for (const json& v : j.at("treatments")) {
        const int a = v.get<int>();
        if (a < 1 || a > DiscreteQuadraticModel::kTreatments) {
          throw FormatError("treatment " + std::to_string(a) + " outside 1.." +
                            std::to_string(DiscreteQuadraticModel::kTreatments));
        }
        t.push_back(a - 1);
      }
      d.design = std::move(t);
    } else {
      d.design = vector_from(j.at("actions"), "actions");
    }
    const auto n = static_cast<Index>(std::visit([](const auto& x) { return static_cast<std::size_t>(x.size()); }, d.design));
    if (n != d.contexts.size()) throw FormatError("design file: design and contexts have different lengths");
    if (j.contains("logits")) d.logits = matrix_from(j.at("logits"), "logits");
    if (j.contains("critic_checkpoint")) d.critic_checkpoint = j.at("critic_checkpoint").get<std::string>();
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("design file: ") + e.what());
  }
}

json train_log_json(const TrainLog& log, const Provenance& p) {
  json records = json::array();
  for (const TrainRecord& r : log.records) {
    records.push_back(json{{"step", r.step},
                           {"loss", r.loss},
                           {"bound", r.bound},
                           {"learning_rate", r.learning_rate},
                           {"temperature", r.temperature},
                           {"hard", r.hard}});
  }
  return json{{"provenance", p.to_json()}, {"records", std::move(records)}};
}

namespace {

json encoder_json(const Encoder& e) {
  json layers = json::array();
  for (const auto& l : e.layers) layers.push_back(json{{"weight", l.weight}, {"bias", l.bias}});
  json j{{"input_dim", e.input_dim}, {"layers", std::move(layers)}, {"batch_norm", e.batch_norm}};
  if (e.batch_norm) {
    j["bn_gamma"] = e.bn_gamma;
    j["bn_beta"] = e.bn_beta;
    j["running_mean"] = matrix_json(e.bn_stats.running_mean);
    j["running_var"] = matrix_json(e.bn_stats.running_var);
    j["momentum"] = e.bn_stats.momentum;
    j["eps"] = e.bn_stats.eps;
  }
  return j;
}

Encoder encoder_from(const json& j, std::size_t n_params) {
  Encoder e;
  e.input_dim = j.at("input_dim").get<Index>();
  auto index = [n_params](const json& v) {
    const auto i = v.get<std::size_t>();
    if (i >= n_params) throw FormatError("critic checkpoint: parameter index out of range");
    return i;
  };
  for (const json& l : j.at("layers")) e.layers.push_back({index(l.at("weight")), index(l.at("bias"))});
  e.batch_norm = j.at("batch_norm").get<bool>();
  if (e.batch_norm) {
    e.bn_gamma = index(j.at("bn_gamma"));
    e.bn_beta = index(j.at("bn_beta"));
    e.bn_stats.running_mean = matrix_from(j.at("running_mean"), "running_mean");
    e.bn_stats.running_var = matrix_from(j.at("running_var"), "running_var");
    e.bn_stats.momentum = j.at("momentum").get<double>();
    e.bn_stats.eps = j.at("eps").get<double>();
  }
  return e;
}

}  // namespace

json critic_to_json(const SeparableCritic& critic, const Provenance& p) {
  json params = json::array();
  for (const Parameter& prm : critic.parameters()) {
    json m = matrix_json(prm.value);
    m["name"] = prm.name;
    params.push_back(std::move(m));
  }
  return json{{"provenance", p.to_json()},
              {"preset", preset_name(critic.preset())},
              {"parameters", std::move(params)},
              {"outcome_encoder", encoder_json(critic.outcome_encoder())},
              {"maxvalue_encoder", encoder_json(critic.maxvalue_encoder())}};
}

SeparableCritic critic_from_json(const json& j) {
  try {
    std::vector<Parameter> params;
    for (const json& m : j.at("parameters")) {
      const std::string name = m.at("name").get<std::string>();
      params.push_back(Parameter{name, matrix_from(m, name)});
    }
    const CriticPreset preset = preset_from_name(j.at("preset").get<std::string>());
    Encoder outcome = encoder_from(j.at("outcome_encoder"), params.size());
    Encoder maxvalue = encoder_from(j.at("maxvalue_encoder"), params.size());
    for (const Encoder* e : {&outcome, &maxvalue}) {
      Index width = e->input_dim;
      for (const auto& l : e->layers) {
        const Matrix& w = params[l.weight].value;
        const Matrix& b = params[l.bias].value;
        if (w.rows() != width || b.rows() != 1 || b.cols() != w.cols()) {
          throw FormatError("critic checkpoint: inconsistent layer shapes at '" + params[l.weight].name + "'");
        }
        width = w.cols();
      }
    }
    return SeparableCritic::from_parts(preset, std::move(params), std::move(outcome), std::move(maxvalue));
  } catch (const json::exception& e) {
    throw FormatError(std::string("critic checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("critic checkpoint: ") + e.what());
  }
}

json EigDocument::to_json() const {
  return json{{"provenance", provenance.to_json()},
              {"method", method},
              {"critic", critic},
              {"eig_mean", number_or_null(estimate.mean)},
              {"eig_se", number_or_null(estimate.se)},
              {"eval_batches", estimate.batches},
              {"batch_size", estimate.batch_size}};
}

EigDocument EigDocument::from_json(const json& j) {
  try {
    EigDocument d;
    d.provenance = Provenance::from_json(j.at("provenance"));
    d.method = j.at("method").get<std::string>();
    d.critic = j.at("critic").get<std::string>();
    d.estimate.mean = number_or_nan(j.at("eig_mean"));
    d.estimate.se = number_or_nan(j.at("eig_se"));
    d.estimate.batches = j.at("eval_batches").get<Index>();
    d.estimate.batch_size = j.at("batch_size").get<Index>();
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("eig file: ") + e.what());
  }
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"method",
                                             "eig_mean",
                                             "eig_se",
                                             "mse_mstar_mean",
                                             "mse_mstar_se",
                                             "mse_psi_mean",
                                             "mse_psi_se",
                                             "mse_a_or_hitrate_mean",
                                             "mse_a_or_hitrate_se",
                                             "regret_mean",
                                             "regret_se",
                                             "n_envs",
                                             "seed"};
  return cols;
}

namespace {

std::string provenance_comment(const Provenance& p) {
  return "# tool_version=" + p.tool_version + ", config_hash=" + p.config_hash + ", model_hash=" + p.model_hash +
         ", seed=" + std::to_string(p.seed) + "\n";
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out + "\n";
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

}  // namespace

std::string metrics_csv(const std::vector<MethodMetrics>& rows, const Provenance& p) {
  std::string out = provenance_comment(p) + join(metrics_columns());
  for (const MethodMetrics& r : rows) {
    const MetricSummary& s = r.summary;
    out += join({r.method, format_double(r.eig_mean), format_double(r.eig_se), format_double(s.mse_maxvalue.mean),
                 format_double(s.mse_maxvalue.se), format_double(s.mse_psi.mean), format_double(s.mse_psi.se),
                 format_double(s.action_score.mean), format_double(s.action_score.se), format_double(s.regret.mean),
                 format_double(s.regret.se), std::to_string(s.n_envs), std::to_string(r.seed)});
  }
  return out;
}

json metrics_json(const std::vector<MethodMetrics>& rows, const Provenance& p) {
  json out = json::array();
  for (const MethodMetrics& r : rows) {
    const MetricSummary& s = r.summary;
    out.push_back(json{{"method", r.method},
                       {"eig_mean", number_or_null(r.eig_mean)},
                       {"eig_se", number_or_null(r.eig_se)},
                       {"mse_mstar_mean", number_or_null(s.mse_maxvalue.mean)},
                       {"mse_mstar_se", number_or_null(s.mse_maxvalue.se)},
                       {"mse_psi_mean", number_or_null(s.mse_psi.mean)},
                       {"mse_psi_se", number_or_null(s.mse_psi.se)},
                       {"mse_a_or_hitrate_mean", number_or_null(s.action_score.mean)},
                       {"mse_a_or_hitrate_se", number_or_null(s.action_score.se)},
                       {"regret_mean", number_or_null(s.regret.mean)},
                       {"regret_se", number_or_null(s.regret.se)},
                       {"n_envs", s.n_envs},
                       {"failures", s.failures},
                       {"ess_mean", number_or_null(s.ess.mean)},
                       {"seed", r.seed}});
  }
  return json{{"provenance", p.to_json()}, {"methods", std::move(out)}};
}

MetricsTable parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw FormatError("metrics csv: missing provenance comment");
  std::map<std::string, std::string> kv;
  for (const std::string& part : split(line.substr(2), ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw FormatError("metrics csv: malformed provenance entry '" + part + "'");
    kv[trim(part.substr(0, eq))] = trim(part.substr(eq + 1));
  }
  MetricsTable t;
  try {
    t.provenance.tool_version = kv.at("tool_version");
    t.provenance.config_hash = kv.at("config_hash");
    t.provenance.model_hash = kv.at("model_hash");
    t.provenance.seed = std::stoull(kv.at("seed"));
  } catch (const std::exception&) {
    throw FormatError("metrics csv: incomplete provenance comment");
  }
  if (!std::getline(is, line) || split(line, ',') != metrics_columns()) throw FormatError("metrics csv: unexpected header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() != metrics_columns().size()) throw FormatError("metrics csv: row has the wrong number of fields");
    t.rows.push_back(std::move(fields));
  }
  return t;
}

std::string merge_metrics_csv(const std::vector<MetricsTable>& tables) {
  if (tables.empty()) throw FormatError("report: nothing to merge");
  const Provenance& first = tables.front().provenance;
  for (const MetricsTable& t : tables) {
    if (t.provenance.model_hash != first.model_hash) {
      throw FormatError("report: refusing to merge runs of different models (model_hash " + first.model_hash + " vs " +
                        t.provenance.model_hash + ")");
    }
  }
  std::string out = provenance_comment(first) + join(metrics_columns());
  for (const MetricsTable& t : tables) {
    for (const auto& row : t.rows) out += join(row);
  }
  return out;
}

std::string design_svg(const DesignDocument& doc) {
  const bool discrete = std::holds_alternative<std::vector<int>>(doc.design);
  const Index n = doc.contexts.size();
  std::vector<double> ys(static_cast<std::size_t>(n));
  if (discrete) {
    const auto& t = std::get<std::vector<int>>(doc.design);
    if (static_cast<Index>(t.size()) != n) throw FormatError("plot: design and contexts differ in length");
    for (Index i = 0; i < n; ++i) ys[static_cast<std::size_t>(i)] = t[static_cast<std::size_t>(i)] + 1;
  } else {
    const auto& a = std::get<Vector>(doc.design);
    if (a.size() != n) throw FormatError("plot: design and contexts differ in length");
    for (Index i = 0; i < n; ++i) ys[static_cast<std::size_t>(i)] = a(i);
  }

  const double w = 480, h = 320, margin = 48;
  double x_lo = doc.contexts.minCoeff(), x_hi = doc.contexts.maxCoeff();
  double y_lo = discrete ? 0.5 : *std::min_element(ys.begin(), ys.end());
  double y_hi = discrete ? 4.5 : *std::max_element(ys.begin(), ys.end());
  if (x_hi - x_lo < 1e-9) { x_lo -= 1; x_hi += 1; }
  if (y_hi - y_lo < 1e-9) { y_lo -= 1; y_hi += 1; }
  auto px = [&](double x) { return margin + (x - x_lo) / (x_hi - x_lo) * (w - 2 * margin); };
  auto py = [&](double y) { return h - margin - (y - y_lo) / (y_hi - y_lo) * (h - 2 * margin); };
  static const char* palette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << " " << h << "\">\n";
  os << "<!-- tool_version=" << doc.provenance.tool_version << ", config_hash=" << doc.provenance.config_hash
     << ", seed=" << doc.provenance.seed << " -->\n";
  os << "<title>" << doc.method << " designs</title>\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<line x1=\"" << margin << "\" y1=\"" << h - margin << "\" x2=\"" << w - margin << "\" y2=\"" << h - margin
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << h - margin
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">context</text>\n";
  os << "<text x=\"14\" y=\"" << h / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
     << h / 2 << ")\">" << (discrete ? "treatment" : "action") << "</text>\n";
  for (Index i = 0; i < n; ++i) {
    const double y = ys[static_cast<std::size_t>(i)];
    const char* colour = discrete ? palette[(static_cast<int>(y) - 1) % 4] : "#1f77b4";
    os << "<circle class=\"marker\" cx=\"" << format_double(px(doc.contexts(i))) << "\" cy=\"" << format_double(py(y))
       << "\" r=\"5\" fill=\"" << colour << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mvbed
