#include "trialbridge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "trialbridge/error.hpp"
#include "trialbridge/similarity.hpp"

namespace trialbridge {

namespace {

using nlohmann::json;

struct ChecklistItem {
  const char* id;
  int step;
  const char* question;
};

const ChecklistItem kChecklist[] = {
    {"trial_relevant", 1, "Does the trial address a decision that matters for the target population?"},
    {"target_defined", 1, "Is the target population defined, with a data source that represents it?"},
    {"modifiers_listed", 1, "Were candidate effect modifiers listed before looking at outcomes?"},
    {"modifiers_comparable", 2, "Are those modifiers recorded the same way in both data sources?"},
    {"no_unmeasured_modifier", 3, "Is it plausible that no important modifier is left unmeasured?"},
    {"versions_consistent", 3, "Do treatment and outcome definitions mean the same thing in both settings?"},
    {"sensitivity_prespecified", 7, "Were the sensitivity scenarios fixed before estimation?"},
    {"interpretation_reviewed", 8, "Has a subject-matter expert reviewed the agreement verdicts?"},
};

class Timer {
 public:
  explicit Timer(std::map<std::string, double>& sink) : sink_(sink) {}
  template <class F>
  auto step(const std::string& name, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        record(name, start);
      } else {
        auto r = f();
        record(name, start);
        return r;
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "step '" + name + "' failed: " + e.what());
    }
  }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point start) {
    sink_[name] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
  std::map<std::string, double>& sink_;
};

std::vector<std::string> default_covariates(const Schema& schema, bool ps) {
  std::vector<std::string> out;
  for (const auto& c : schema) {
    if (ps ? c.in_ps_model : c.in_outcome_model) out.push_back(c.name);
  }
  return out;
}

std::vector<std::string> shared(const std::vector<std::string>& wanted, const StudyTable& table,
                                const std::string& what, std::vector<std::string>& warnings) {
  std::vector<std::string> out;
  for (const auto& n : wanted) {
    if (table.find(n)) {
      out.push_back(n);
    } else {
      warnings.push_back(what + " covariate '" + n + "' is not available after harmonization; ignored");
    }
  }
  return out;
}

struct Inputs {
  StudyTable trial, target, stacked;
  std::vector<std::string> dropped;
  std::vector<std::string> warnings;
  std::vector<std::string> ps_covs, outcome_covs, modifiers;
};

Inputs load_inputs(const PipelineConfig& cfg, Timer& timer) {
  Inputs in;
  const SchemaPair schemas = timer.step("load", [&] { return load_schema(cfg.schema_json); });
  StudyTable trial = timer.step("load", [&] { return load_study(cfg.trial_csv, schemas.trial, Side::Trial); });
  StudyTable target = timer.step("load", [&] { return load_study(cfg.target_csv, schemas.target, Side::Target); });
  if (trial.provenance.excluded_missing_outcome > 0) {
    in.warnings.push_back(std::to_string(trial.provenance.excluded_missing_outcome) +
                          " trial units without treatment or outcome were excluded");
  }
  HarmonizedPair h = timer.step("harmonize", [&] { return harmonize(trial, target); });
  in.dropped = h.dropped;
  in.warnings.insert(in.warnings.end(), h.warnings.begin(), h.warnings.end());
  in.trial = std::move(h.trial);
  in.target = std::move(h.target);

  const Schema& schema = in.trial.schema;
  in.ps_covs = shared(cfg.ps_covariates.value_or(default_covariates(schema, true)), in.trial, "sampling-score",
                      in.warnings);
  in.outcome_covs = shared(cfg.outcome_covariates.value_or(default_covariates(schema, false)), in.trial,
                           "outcome-model", in.warnings);
  if (in.ps_covs.empty()) fail(ErrorKind::Role, "no sampling-score covariates remain");
  std::vector<std::string> mods;
  if (cfg.modifiers) {
    mods = *cfg.modifiers;
  } else {
    for (const auto& c : schema) {
      if (c.is_effect_modifier_candidate) mods.push_back(c.name);
    }
  }
  in.modifiers = shared(mods, in.trial, "effect-modifier", in.warnings);

  std::set<std::string> used(in.ps_covs.begin(), in.ps_covs.end());
  used.insert(in.outcome_covs.begin(), in.outcome_covs.end());
  used.insert(in.modifiers.begin(), in.modifiers.end());
  for (const auto& s : cfg.subgroups) {
    if (!in.trial.find(s)) fail(ErrorKind::Config, "subgroup covariate '" + s + "' is not available");
    used.insert(s);
  }
  std::vector<std::string> keep;
  for (const auto& c : schema) {
    if (used.count(c.name)) keep.push_back(c.name);
  }
  in.trial = in.trial.select(keep);
  in.target = in.target.select(keep);
  in.stacked = timer.step("stack", [&] { return stack(in.trial, in.target); });
  return in;
}

/// Data after the missing-data step: either one analysis table or a set of
/// completed tables.
struct Prepared {
  MissingStrategy strategy = MissingStrategy::PsiWithin;
  bool imputed = false;
  StudyTable table;  // complete-case table, original table, or first completed table
  std::optional<ImputationSet> imps;
  std::size_t dropped_rows = 0;
};

Prepared prepare(const StudyTable& stacked, MissingStrategy strategy, const MiceConfig& mice_cfg) {
  Prepared p;
  p.strategy = strategy;
  if (!stacked.has_missing()) {
    p.table = stacked;
    return p;
  }
  if (strategy == MissingStrategy::CompleteCase) {
    p.table = complete_cases(stacked);
    p.dropped_rows = stacked.size() - p.table.size();
    if (p.table.n_trial() == 0 || p.table.n_target() == 0) {
      fail(ErrorKind::Estimation, "complete-case analysis leaves one side empty");
    }
    return p;
  }
  p.imputed = true;
  p.imps = mice(stacked, mice_cfg);
  p.table = p.imps->completed.front();
  return p;
}

struct Estimation {
  EffectEstimate estimate;
  std::optional<PooledEstimate> pooled;
};

Estimation estimate(const Prepared& prep, const StudyTable& raw, const AnalysisSpec& spec, const PipelineConfig& cfg,
                    std::uint64_t seed) {
  Estimation out;
  if (!prep.imputed) {
    out.estimate = analyze(prep.table, spec, seed);
    return out;
  }
  if (prep.strategy == MissingStrategy::PsiAcross) {
    out.estimate = psi_across(*prep.imps, spec, seed);
    return out;
  }
  if (cfg.mi_bootstrap) {
    out.estimate = mi_boot(raw, cfg.mice, spec, cfg.bootstrap_replicates, seed);
    return out;
  }
  const PooledEstimate pooled = psi_within(*prep.imps, spec, seed);
  EffectEstimate e;
  e.estimand = Estimand::PATE;
  e.method = spec.method;
  e.point = pooled.point;
  e.se = std::sqrt(pooled.total);
  e.ci_lo = pooled.ci_lo;
  e.ci_hi = pooled.ci_hi;
  e.level = 1.0 - spec.alpha;
  e.variance.kind = VarianceKind::Rubin;
  e.n_trial = prep.table.n_trial();
  e.n_target = prep.table.n_target();
  e.flags.push_back("pooled over " + std::to_string(pooled.m) + " imputations");
  out.estimate = e;
  out.pooled = pooled;
  return out;
}

AnalysisSpec make_spec(const PipelineConfig& cfg, const Inputs& in, const EstimatorRequest& req) {
  AnalysisSpec s;
  s.scenario = cfg.scenario;
  s.ps.family = cfg.ps_family;
  s.ps.covariates = in.ps_covs;
  s.ps.forest = cfg.forest;
  s.policy = cfg.policy;
  s.method = req.method;
  s.outcome.type = cfg.outcome_type;
  s.outcome.covariates = in.outcome_covs;
  s.outcome.saturated = cfg.outcome_saturated;
  s.e_trial = cfg.e_trial;
  s.variance = req.variance;
  s.bootstrap_replicates = cfg.bootstrap_replicates;
  s.flavor = cfg.flavor;
  s.alpha = cfg.alpha;
  return s;
}

StudyTable dichotomize(const StudyTable& t, double cutoff) {
  StudyTable out = t;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.s[i] == 1) out.y[i] = out.y[i] > cutoff ? 1.0 : 0.0;
  }
  return out;
}

std::vector<std::string> without(const std::vector<std::string>& v, const std::vector<std::string>& drop) {
  std::vector<std::string> out;
  for (const auto& x : v) {
    if (std::find(drop.begin(), drop.end(), x) == drop.end()) out.push_back(x);
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

RunReport run(const PipelineConfig& cfg) {
  RunReport report;
  Timer timer(report.timing_ms);
  Inputs in = load_inputs(cfg, timer);
  std::vector<std::string> warnings = in.warnings;
  std::vector<std::string> caveats;

  const MissingnessReport miss = timer.step("missingness", [&] { return missingness_profile(in.stacked); });
  const Prepared prep = timer.step("missing_data", [&] { return prepare(in.stacked, cfg.missing, cfg.mice); });
  if (prep.dropped_rows > 0) {
    warnings.push_back("complete-case analysis dropped " + std::to_string(prep.dropped_rows) + " units");
  }

  // Scores and weights for the diagnostics.
  const AnalysisSpec base_spec = make_spec(cfg, in, cfg.estimators.front());
  const PropensityFit fit = timer.step("sampling_score", [&] {
    PsModelSpec ps = base_spec.ps;
    ps.forest.seed = derive_seed(cfg.seed, "diagnostic-forest");
    if (prep.imputed && prep.strategy == MissingStrategy::PsiAcross) {
      std::vector<double> avg(prep.table.size(), 0.0);
      for (const auto& t : prep.imps->completed) {
        const auto f = estimate_sampling_score(t, ps, cfg.scenario);
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += f.ps[i];
      }
      for (double& v : avg) v /= static_cast<double>(prep.imps->completed.size());
      return propensity_from_scores(prep.table, std::move(avg), cfg.scenario);
    }
    return estimate_sampling_score(prep.table, ps, cfg.scenario);
  });
  for (const auto& w : fit.model.warnings) warnings.push_back("sampling-score model: " + w);
  if (fit.model.separation) warnings.push_back("sampling-score model shows signs of separation");
  if (!fit.model.convergence.converged) warnings.push_back("sampling-score model did not converge");

  const WeightSet weights = timer.step("weights", [&] { return trim_stabilize(make_weights(fit), cfg.policy); });
  report.weights_csv = weights_csv(weights);

  const PositivityAudit audit =
      timer.step("positivity", [&] { return positivity_audit(fit, prep.table, in.modifiers); });
  for (const auto& m : audit.modifiers) {
    if (m.violation) {
      warnings.push_back("effect modifier '" + m.name + "' has " + std::to_string(m.violating_units) +
                         " target units outside the trial range");
    }
  }
  if (audit.trial_below_clamp + audit.trial_above_clamp > 0) {
    warnings.push_back("some trial sampling scores were clamped to [1e-6, 1 - 1e-6]");
  }

  const SimilarityReport sim =
      timer.step("similarity", [&] { return similarity_report(prep.table, fit, &weights, cfg.smd_threshold); });
  if (sim.tipton_category == TiptonCategory::Low) {
    caveats.push_back("NOT GENERALIZABLE: the Tipton index is below 0.5, so the trial and target score "
                      "distributions overlap too little to support translating the trial result");
  }
  if (cfg.delta_p_gate && sim.standardized_delta_p.defined &&
      std::abs(sim.standardized_delta_p.value) > *cfg.delta_p_gate) {
    warnings.push_back("standardized delta-p " + fixed(sim.standardized_delta_p.value, 3) +
                       " exceeds the configured gate " + fixed(*cfg.delta_p_gate, 3));
  }
  const double ratio = static_cast<double>(in.stacked.n_trial()) / static_cast<double>(in.stacked.n_target());
  if (ratio < 0.02) {
    caveats.push_back("The trial is smaller than 2% of the target sample (ratio " + fixed(ratio, 4) +
                      "). Simulation studies found every estimator unreliable at this size ratio; treat the "
                      "target estimates as unstable.");
  }
  caveats.push_back("Exchangeability of trial and target given the measured covariates cannot be checked from "
                    "the data.");
  caveats.push_back("The analysis assumes no interference between units and a single version of treatment "
                    "in both settings.");

  // Estimates.
  const StudyTable tate_table = prep.imputed ? in.stacked : prep.table;
  const EffectEstimate tate_est = timer.step("estimates", [&] { return tate(tate_table, cfg.alpha); });
  std::vector<Estimation> pates(cfg.estimators.size());
  timer.step("estimates", [&] {
    for (std::size_t k = 0; k < cfg.estimators.size(); ++k) {
      pates[k] = estimate(prep, in.stacked, make_spec(cfg, in, cfg.estimators[k]), cfg,
                          derive_seed(cfg.seed, "estimator", k));
    }
  });

  json verdicts = json::array();
  timer.step("verdict", [&] {
    for (std::size_t k = 0; k < pates.size(); ++k) {
      json v = to_json(compare_effects(tate_est, pates[k].estimate, cfg.design));
      v["estimator"] = to_string(cfg.estimators[k].method);
      verdicts.push_back(v);
    }
  });

  // Sensitivity scenarios rerun the first requested estimator.
  const ScenarioRunner runner = [&](const ScenarioSpec* spec) -> ScenarioOutcome {
    AnalysisSpec a = base_spec;
    const std::uint64_t seed = derive_seed(cfg.seed, "estimator", 0);
    if (!spec) return {tate_est, estimate(prep, in.stacked, a, cfg, seed).estimate};
    return std::visit(
        [&](const auto& p) -> ScenarioOutcome {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, DropCovariates>) {
            a.ps.covariates = without(a.ps.covariates, p.names);
            a.outcome.covariates = without(a.outcome.covariates, p.names);
            if (a.ps.covariates.empty()) fail(ErrorKind::Config, "dropping covariates leaves an empty score model");
            return {tate_est, estimate(prep, in.stacked, a, cfg, seed).estimate};
          } else if constexpr (std::is_same_v<P, TrimmingPolicy>) {
            a.policy = p.policy;
            return {tate_est, estimate(prep, in.stacked, a, cfg, seed).estimate};
          } else if constexpr (std::is_same_v<P, AlternateEstimator>) {
            a.method = p.method;
            a.variance = p.method == Method::Ipsw ? VarianceKind::Sandwich : VarianceKind::Bootstrap;
            return {tate_est, estimate(prep, in.stacked, a, cfg, seed).estimate};
          } else if constexpr (std::is_same_v<P, AlternateOutcomeCutoff>) {
            a.outcome.type = OutcomeType::Binary;
            Prepared alt = prep;
            alt.table = dichotomize(prep.table, p.cutoff);
            if (alt.imps) {
              for (auto& t : alt.imps->completed) t = dichotomize(t, p.cutoff);
            }
            const StudyTable raw = dichotomize(in.stacked, p.cutoff);
            return {tate(prep.imputed ? raw : alt.table, cfg.alpha), estimate(alt, raw, a, cfg, seed).estimate};
          } else if constexpr (std::is_same_v<P, CompleteCaseToggle>) {
            const Prepared cc = prepare(in.stacked, MissingStrategy::CompleteCase, cfg.mice);
            return {tate(cc.table, cfg.alpha), estimate(cc, in.stacked, a, cfg, seed).estimate};
          } else {
            fail(ErrorKind::Config, "scenario is applied without rerunning the pipeline");
          }
        },
        spec->perturbation);
  };
  std::vector<ScenarioRow> rows;
  if (!cfg.sensitivity.empty()) {
    rows = timer.step("sensitivity", [&] { return run_scenarios(runner, cfg.sensitivity, cfg.design); });
  }

  std::vector<SubgroupTable> subgroups;
  timer.step("subgroups", [&] {
    const StudyTable trial_rows = tate_table.side(Side::Trial);
    for (const auto& s : cfg.subgroups) subgroups.push_back(subgroup_effects(trial_rows, s, 4, cfg.alpha));
  });

  // Assemble the report body.
  json body;
  body["schema"] = kReportSchemaTag;
  body["config"] = cfg.echo;
  body["inputs"] = {{"trial_rows_read", in.trial.provenance.rows_read},
                    {"target_rows_read", in.target.provenance.rows_read},
                    {"trial_units", in.stacked.n_trial()},
                    {"target_units", in.stacked.n_target()},
                    {"excluded_missing_outcome", in.trial.provenance.excluded_missing_outcome},
                    {"dropped_covariates", in.dropped},
                    {"ps_covariates", in.ps_covs},
                    {"outcome_covariates", in.outcome_covs},
                    {"effect_modifiers", in.modifiers},
                    {"size_ratio", ratio}};
  body["missingness"] = to_json(miss);
  body["missing_data"] = {{"strategy", to_string(cfg.missing)},
                          {"applied", prep.imputed || prep.dropped_rows > 0},
                          {"imputed", prep.imputed},
                          {"complete_case_dropped", prep.dropped_rows},
                          {"diagnostics_table", prep.imputed ? (prep.strategy == MissingStrategy::PsiAcross
                                                                    ? "scores averaged over completed tables"
                                                                    : "first completed table")
                                                             : "observed data"}};
  body["imputation_diagnostics"] = prep.imputed ? imputation_diagnostics(*prep.imps) : json(nullptr);
  body["sampling_score"] = {{"scenario", to_string(cfg.scenario)},
                            {"population", fit.population},
                            {"model", prep.imputed && prep.strategy == MissingStrategy::PsiAcross
                                          ? json(nullptr)
                                          : to_json(fit.model)},
                            {"clamped_low", fit.clamped_low},
                            {"clamped_high", fit.clamped_high}};
  body["weights"] = to_json(weights);
  body["weights"]["policy"] = to_json(cfg.policy);
  body["positivity_audit"] = to_json(audit);
  body["similarity"] = to_json(sim);

  json estimates = json::array({to_json(tate_est)});
  json pooled = json::array();
  for (std::size_t k = 0; k < pates.size(); ++k) {
    estimates.push_back(to_json(pates[k].estimate));
    if (pates[k].pooled) {
      json p = to_json(*pates[k].pooled);
      p["estimator"] = to_string(cfg.estimators[k].method);
      pooled.push_back(p);
    }
  }
  body["estimates"] = estimates;
  body["pooled"] = pooled;
  body["verdict"] = verdicts;
  json sens = json::array();
  for (const auto& r : rows) sens.push_back(to_json(r));
  body["sensitivity"] = sens;
  json sub = json::array();
  for (const auto& s : subgroups) sub.push_back(to_json(s));
  body["subgroups"] = sub;

  json checklist = json::array();
  for (const auto& item : kChecklist) {
    auto it = cfg.checklist.find(item.id);
    checklist.push_back({{"id", item.id},
                         {"step", item.step},
                         {"question", item.question},
                         {"reviewed_by_analyst", it == cfg.checklist.end() ? json(nullptr) : json(it->second)}});
  }
  for (const auto& [k, _] : cfg.checklist) {
    bool known = false;
    for (const auto& item : kChecklist) known |= k == item.id;
    if (!known) warnings.push_back("unknown checklist item '" + k + "' ignored");
  }
  body["checklist"] = checklist;
  body["caveats"] = caveats;
  body["warnings"] = warnings;

  report.body = canonicalize(body);
  return report;
}

json check_balance(const PipelineConfig& cfg) {
  std::map<std::string, double> timing;
  Timer timer(timing);
  Inputs in = load_inputs(cfg, timer);
  const Prepared prep = timer.step("missing_data", [&] { return prepare(in.stacked, cfg.missing, cfg.mice); });
  PsModelSpec ps;
  ps.family = cfg.ps_family;
  ps.covariates = in.ps_covs;
  ps.forest = cfg.forest;
  ps.forest.seed = derive_seed(cfg.seed, "diagnostic-forest");
  const PropensityFit fit = timer.step("sampling_score", [&] { return estimate_sampling_score(prep.table, ps, cfg.scenario); });
  const WeightSet weights = trim_stabilize(make_weights(fit), cfg.policy);
  const SimilarityReport sim = timer.step("similarity", [&] { return similarity_report(prep.table, fit, &weights, cfg.smd_threshold); });
  json out{{"schema", kReportSchemaTag},
           {"similarity", to_json(sim)},
           {"weights", to_json(weights)},
           {"positivity_audit", to_json(positivity_audit(fit, prep.table, in.modifiers))},
           {"warnings", in.warnings}};
  return canonicalize(out);
}

}  // namespace trialbridge
