#include "mvbed/pipeline.hpp"

#include <cmath>

namespace mvbed {

namespace fs = std::filesystem;

Provenance make_provenance(const ExperimentConfig& cfg, std::uint64_t seed) {
  return Provenance{tool_version(), cfg.config_hash(), cfg.model_hash(), seed};
}

std::string method_slug(const std::string& method) {
  std::string out = method;
  for (char& ch : out) {
    if (ch == ':' || ch == '/' || ch == ' ') ch = '_';
  }
  return out;
}

namespace {

// Calls fn(model) with the configured simulator.
template <typename Fn>
decltype(auto) with_model(const ExperimentConfig& cfg, Fn&& fn) {
  if (cfg.model == ModelKind::Discrete) return fn(DiscreteQuadraticModel(cfg.discrete));
  return fn(ContinuousBumpModel(cfg.continuous));
}

template <typename Model>
const typename Model::Design& design_of(const Model&, const DesignDocument& doc) {
  const auto* d = std::get_if<typename Model::Design>(&doc.design);
  if (d == nullptr) throw ConfigError("design file for method '" + doc.method + "' does not match the configured model");
  return *d;
}

}  // namespace

TrainedDesign train_ours(const ExperimentConfig& cfg, std::uint64_t seed) {
  const ContextPair ctx = cfg.contexts.build();
  RngStream root = RngStream(seed).split("train");
  RngStream critic_rng = root.split("critic");
  SeparableCritic critic(cfg.critic, ctx.experimental.size(), ctx.evaluation.size(), critic_rng);
  RngStream batches = root.split("batches");

  TrainedDesign out;
  out.design.provenance = make_provenance(cfg, seed);
  out.design.method = kOursMethod;
  out.design.model = model_kind_name(cfg.model);
  out.design.contexts = ctx.experimental;

  TrainResult result = with_model(cfg, [&](const auto& model) {
    using Model = std::decay_t<decltype(model)>;
    if constexpr (std::is_same_v<Model, DiscreteQuadraticModel>) {
      return train_designs(model, ctx, initial_policy(model, ctx.experimental.size(), cfg.train), std::move(critic),
                           cfg.train, batches);
    } else {
      RngStream init = root.split("init");
      return train_designs(model, ctx, initial_design(model, ctx.experimental.size(), init), std::move(critic),
                           cfg.train, batches);
    }
  });
  with_model(cfg, [&](const auto& model) {
    using Model = std::decay_t<decltype(model)>;
    if constexpr (std::is_same_v<Model, DiscreteQuadraticModel>) {
      const auto& policy = std::get<DiscretePolicy>(result.design);
      out.design.design = extract_design(model, policy);
      out.design.logits = policy.logits;
    } else {
      out.design.design = extract_design(model, std::get<ContinuousDesign>(result.design));
    }
  });
  out.design.critic_checkpoint = "critic_" + method_slug(kOursMethod) + ".json";
  out.critic = std::move(result.critic);
  out.log = std::move(result.log);
  return out;
}

DesignDocument make_baseline(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& method) {
  const BaselineSpec spec = cfg.baseline_spec(method);
  const ContextPair ctx = cfg.contexts.build();
  RngStream rng = RngStream(seed).split("baseline").split(method);

  DesignDocument doc;
  doc.provenance = make_provenance(cfg, seed);
  doc.method = method;
  doc.model = model_kind_name(cfg.model);
  doc.contexts = ctx.experimental;
  with_model(cfg, [&](const auto& model) {
    using Model = std::decay_t<decltype(model)>;
    const Index d = ctx.experimental.size();
    if (spec.kind == BaselineSpec::Kind::Random) {
      if constexpr (std::is_same_v<Model, DiscreteQuadraticModel>) {
        doc.design = random_designs(model, d, rng);
      } else {
        doc.design = random_designs(model, d, spec.parameter, rng);
      }
    } else {
      doc.design = ucb_designs(model, ctx.experimental, spec.parameter, spec, rng);
    }
  });
  return doc;
}

void check_design_matches(const ExperimentConfig& cfg, const DesignDocument& design) {
  if (design.model != model_kind_name(cfg.model)) {
    throw ConfigError("design file is for the " + design.model + " model but the config selects " +
                      model_kind_name(cfg.model));
  }
  const ContextPair ctx = cfg.contexts.build();
  if (design.contexts.size() != ctx.experimental.size() ||
      (design.contexts - ctx.experimental).cwiseAbs().maxCoeff() > 1e-12) {
    throw ConfigError("design file contexts do not match the configured context grid");
  }
  if (design.provenance.model_hash != cfg.model_hash()) {
    throw ConfigError("design file model_hash " + design.provenance.model_hash + " differs from config " +
                      cfg.model_hash());
  }
}

EigDocument estimate_eig(const ExperimentConfig& cfg, std::uint64_t seed, const DesignDocument& design,
                         const SeparableCritic* joint) {
  check_design_matches(cfg, design);
  const ContextPair ctx = cfg.contexts.build();
  RngStream rng = RngStream(seed).split("eig").split(design.method);

  EigDocument doc;
  doc.provenance = make_provenance(cfg, seed);
  doc.method = design.method;
  doc.critic = joint != nullptr ? "joint" : "fresh";
  doc.estimate = with_model(cfg, [&](const auto& model) {
    const auto& d = design_of(model, design);
    if (joint != nullptr) {
      RngStream eval = rng.split("eval");
      return evaluate_bound(model, ctx, d, *joint, cfg.train.batch_size, cfg.eig.eval_batches, eval);
    }
    return eig_of_fixed_designs(model, ctx, d, cfg.fixed_design_train(), cfg.eig.eval_batches, rng).estimate;
  });
  if (!std::isfinite(doc.estimate.mean)) throw NumericalError("EIG estimate for '" + design.method + "' is not finite");
  return doc;
}

DeployResult deploy_eval(const ExperimentConfig& cfg, std::uint64_t seed, const DesignDocument& design,
                         unsigned workers, const EigDocument* eig) {
  check_design_matches(cfg, design);
  const ContextPair ctx = cfg.contexts.build();
  DeployConfig dc = cfg.deploy;
  dc.workers = workers;
  const RngStream rng = RngStream(seed).split("deploy");

  DeployResult out;
  out.realisations = with_model(cfg, [&](const auto& model) {
    return run_realisations(model, ctx, design_of(model, design), dc, rng);
  });
  out.metrics.method = design.method;
  out.metrics.summary = summarise(out.realisations);
  out.metrics.seed = seed;
  if (eig != nullptr) {
    out.metrics.eig_mean = eig->estimate.mean;
    out.metrics.eig_se = eig->estimate.se;
  }
  return out;
}

fs::path design_path(const fs::path& out, const std::string& method) {
  return out / ("designs_" + method_slug(method) + ".json");
}

fs::path eig_path(const fs::path& out, const std::string& method) {
  return out / ("eig_" + method_slug(method) + ".json");
}

void write_trained(const fs::path& out, const TrainedDesign& t) {
  const Provenance& p = t.design.provenance;
  write_file_atomic(out / t.design.critic_checkpoint, dump_json(critic_to_json(t.critic, p)));
  write_file_atomic(out / ("train_log_" + method_slug(t.design.method) + ".json"), dump_json(train_log_json(t.log, p)));
  write_file_atomic(design_path(out, t.design.method), dump_json(t.design.to_json()));
}

void write_metrics(const fs::path& out, const std::vector<MethodMetrics>& rows, const Provenance& p) {
  write_file_atomic(out / "metrics.csv", metrics_csv(rows, p));
  write_file_atomic(out / "metrics.json", dump_json(metrics_json(rows, p)));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, unsigned workers,
                                const std::optional<fs::path>& out) {
  ExperimentResult r;
  r.ours = train_ours(cfg, seed);
  if (out) write_trained(*out, r.ours);

  r.designs.push_back(r.ours.design);
  for (const std::string& method : cfg.baselines) {
    r.designs.push_back(make_baseline(cfg, seed, method));
    if (out) write_file_atomic(design_path(*out, method), dump_json(r.designs.back().to_json()));
  }

  // Fresh-critic trainings are independent; each owns its substream.
  r.eig.resize(r.designs.size());
  r.eig[0] = estimate_eig(cfg, seed, r.designs[0], &r.ours.critic);
  parallel_for(static_cast<Index>(r.designs.size()) - 1, workers, [&](Index i) {
    const auto k = static_cast<std::size_t>(i + 1);
    r.eig[k] = estimate_eig(cfg, seed, r.designs[k]);
  });

  std::vector<MethodMetrics> rows;
  for (std::size_t k = 0; k < r.designs.size(); ++k) {
    if (out) write_file_atomic(eig_path(*out, r.designs[k].method), dump_json(r.eig[k].to_json()));
    r.deploy.push_back(deploy_eval(cfg, seed, r.designs[k], workers, &r.eig[k]));
    rows.push_back(r.deploy.back().metrics);
  }
  if (out) write_metrics(*out, rows, make_provenance(cfg, seed));
  return r;
}

}  // namespace mvbed
