#include "trialbridge/verdict.hpp"

#include <cmath>

#include "trialbridge/error.hpp"
#include "trialbridge/parallel.hpp"
#include "trialbridge/stats.hpp"

namespace trialbridge {

EffectEstimate published_estimate(Estimand estimand, double point, double ci_lo, double ci_hi,
                                  std::optional<double> sd, double level) {
  if (!(ci_lo <= ci_hi)) fail(ErrorKind::Config, "published interval has lower bound above upper bound");
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::Config, "confidence level must lie in (0, 1)");
  EffectEstimate e;
  e.estimand = estimand;
  e.method = estimand == Estimand::TATE ? Method::DifferenceInMeans : Method::Ipsw;
  e.point = point;
  e.ci_lo = ci_lo;
  e.ci_hi = ci_hi;
  e.level = level;
  e.se = sd ? *sd : (ci_hi - ci_lo) / (2.0 * stats::z_critical(1.0 - level));
  e.variance.kind = VarianceKind::Carried;
  e.degenerate = e.se == 0.0;
  return e;
}

namespace {

int significance(const EffectEstimate& e) {
  if (e.ci_lo > 0.0) return 1;
  if (e.ci_hi < 0.0) return -1;
  return 0;
}

}  // namespace

bool regulatory_agreement(const EffectEstimate& tate, const EffectEstimate& pate) {
  if (std::abs(tate.level - pate.level) > 1e-9) {
    fail(ErrorKind::Estimation, "trial and target intervals use different confidence levels");
  }
  return significance(tate) == significance(pate);
}

bool estimate_agreement(const EffectEstimate& tate, const EffectEstimate& pate) {
  return pate.point >= tate.ci_lo && pate.point <= tate.ci_hi;
}

bool design_agreement(const EffectEstimate& pate, const DesignThreshold& threshold) {
  if (!(threshold.magnitude >= 0.0)) fail(ErrorKind::Config, "design threshold magnitude must be non-negative");
  const double m = threshold.magnitude;
  return threshold.direction == Direction::Increase ? pate.point >= m : pate.point <= -m;
}

Measure standardized_difference(const EffectEstimate& tate, const EffectEstimate& pate) {
  const double denom = std::sqrt(tate.se * tate.se + pate.se * pate.se);
  if (!(denom > 0.0) || !std::isfinite(denom)) return Measure::undefined();
  return Measure::of((pate.point - tate.point) / denom);
}

AgreementVerdict compare_effects(const EffectEstimate& tate, const EffectEstimate& pate,
                                 const std::optional<DesignThreshold>& threshold) {
  AgreementVerdict v;
  v.tate = tate;
  v.pate = pate;
  v.regulatory = regulatory_agreement(tate, pate);
  v.estimate = estimate_agreement(tate, pate);
  if (threshold) v.design = design_agreement(pate, *threshold);
  v.standardized_difference = standardized_difference(tate, pate);
  return v;
}

EffectEstimate adjust_unmeasured_modifier(const EffectEstimate& pate, double delta_u, double prev_trial,
                                          double prev_target) {
  for (double p : {prev_trial, prev_target}) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::Config, "modifier prevalence must lie in [0, 1]");
  }
  EffectEstimate e = pate;
  const double shift = delta_u * (prev_target - prev_trial);
  e.point += shift;
  e.ci_lo += shift;
  e.ci_hi += shift;
  e.variance.kind = VarianceKind::Carried;
  e.flags.push_back("standard error carried over from the unadjusted estimate");
  return e;
}

std::string perturbation_name(const Perturbation& p) {
  struct {
    std::string operator()(const UnmeasuredModifier&) const { return "unmeasured_modifier"; }
    std::string operator()(const DropCovariates&) const { return "drop_covariates"; }
    std::string operator()(const TrimmingPolicy&) const { return "trimming"; }
    std::string operator()(const AlternateEstimator&) const { return "alternate_estimator"; }
    std::string operator()(const AlternateOutcomeCutoff&) const { return "outcome_cutoff"; }
    std::string operator()(const CompleteCaseToggle&) const { return "complete_case"; }
  } visitor;
  return std::visit(visitor, p);
}

std::vector<ScenarioRow> run_scenarios(const ScenarioRunner& runner, const std::vector<ScenarioSpec>& specs,
                                       const std::optional<DesignThreshold>& threshold) {
  std::vector<ScenarioRow> rows(specs.size() + 1);
  rows[0].label = "base";
  rows[0].perturbation = "none";
  try {
    const ScenarioOutcome base = runner(nullptr);
    rows[0].tate = base.tate;
    rows[0].pate = base.pate;
    rows[0].verdict = compare_effects(base.tate, base.pate, threshold);
  } catch (const Error& e) {
    rows[0].error = e.what();
  }

  parallel_for(specs.size(), [&](std::size_t k) {
    ScenarioRow& row = rows[k + 1];
    const ScenarioSpec& spec = specs[k];
    row.label = spec.label;
    row.perturbation = perturbation_name(spec.perturbation);
    try {
      ScenarioOutcome out;
      if (const auto* u = std::get_if<UnmeasuredModifier>(&spec.perturbation)) {
        if (!rows[0].pate) fail(ErrorKind::Estimation, "base analysis failed; nothing to adjust");
        out.tate = *rows[0].tate;
        out.pate = adjust_unmeasured_modifier(*rows[0].pate, u->delta_u, u->prev_trial, u->prev_target);
      } else {
        out = runner(&spec);
      }
      row.tate = out.tate;
      row.pate = out.pate;
      row.verdict = compare_effects(out.tate, out.pate, threshold);
    } catch (const Error& e) {
      row.error = e.what();
    }
  });
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json measure_json(const Measure& m) { return m.defined ? nlohmann::json(m.value) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const AgreementVerdict& v) {
  nlohmann::json j{{"regulatory", v.regulatory},
                   {"estimate", v.estimate},
                   {"standardized_difference", measure_json(v.standardized_difference)},
                   {"standardized_difference_defined", v.standardized_difference.defined},
                   {"tate", to_json(v.tate)},
                   {"pate", to_json(v.pate)}};
  j["design"] = v.design ? nlohmann::json(*v.design) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const ScenarioRow& row) {
  nlohmann::json j{{"label", row.label}, {"perturbation", row.perturbation}};
  j["tate"] = row.tate ? to_json(*row.tate) : nlohmann::json(nullptr);
  j["pate"] = row.pate ? to_json(*row.pate) : nlohmann::json(nullptr);
  if (row.verdict) {
    j["regulatory"] = row.verdict->regulatory;
    j["estimate"] = row.verdict->estimate;
    j["design"] = row.verdict->design ? nlohmann::json(*row.verdict->design) : nlohmann::json(nullptr);
    j["standardized_difference"] = measure_json(row.verdict->standardized_difference);
  }
  j["error"] = row.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(row.error);
  return j;
}

nlohmann::json to_json(const WeightPolicy& policy) {
  auto steps = nlohmann::json::array();
  for (const auto& s : policy.steps) {
    if (const auto* cap = std::get_if<TrimCap>(&s)) {
      steps.push_back({{"type", "cap"}, {"p_lo", cap->p_lo}, {"p_hi", cap->p_hi}});
    } else {
      steps.push_back({{"type", "normalize"}});
    }
  }
  return steps;
}

WeightPolicy weight_policy_from_json(const nlohmann::json& j) {
  if (!j.is_array()) fail(ErrorKind::Config, "weighting policy must be an array of steps");
  WeightPolicy p;
  for (const auto& s : j) {
    const std::string type = s.at("type").get<std::string>();
    if (type == "cap") {
      p.steps.push_back(TrimCap{s.value("p_lo", 0.0), s.value("p_hi", 100.0)});
    } else if (type == "normalize") {
      p.steps.push_back(Normalize{});
    } else {
      fail(ErrorKind::Config, "unknown weighting step '" + type + "'");
    }
  }
  return p;
}

nlohmann::json to_json(const ScenarioSpec& spec) {
  nlohmann::json j{{"label", spec.label}, {"type", perturbation_name(spec.perturbation)}};
  std::visit(
      [&j](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, UnmeasuredModifier>) {
          j["delta_u"] = p.delta_u;
          j["prev_trial"] = p.prev_trial;
          j["prev_target"] = p.prev_target;
        } else if constexpr (std::is_same_v<P, DropCovariates>) {
          j["names"] = p.names;
        } else if constexpr (std::is_same_v<P, TrimmingPolicy>) {
          j["policy"] = to_json(p.policy);
        } else if constexpr (std::is_same_v<P, AlternateEstimator>) {
          j["method"] = to_string(p.method);
        } else if constexpr (std::is_same_v<P, AlternateOutcomeCutoff>) {
          j["cutoff"] = p.cutoff;
        }
      },
      spec.perturbation);
  return j;
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  try {
    ScenarioSpec s;
    const std::string type = j.at("type").get<std::string>();
    s.label = j.value("label", type);
    if (type == "unmeasured_modifier") {
      s.perturbation = UnmeasuredModifier{j.at("delta_u").get<double>(), j.at("prev_trial").get<double>(),
                                          j.at("prev_target").get<double>()};
    } else if (type == "drop_covariates") {
      s.perturbation = DropCovariates{j.at("names").get<std::vector<std::string>>()};
    } else if (type == "trimming") {
      s.perturbation = TrimmingPolicy{weight_policy_from_json(j.at("policy"))};
    } else if (type == "alternate_estimator") {
      s.perturbation = AlternateEstimator{parse_method(j.at("method").get<std::string>())};
    } else if (type == "outcome_cutoff") {
      s.perturbation = AlternateOutcomeCutoff{j.at("cutoff").get<double>()};
    } else if (type == "complete_case") {
      s.perturbation = CompleteCaseToggle{};
    } else {
      fail(ErrorKind::Config, "unknown sensitivity scenario type '" + type + "'");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("malformed sensitivity scenario: ") + e.what());
  }
}

}  // namespace trialbridge
