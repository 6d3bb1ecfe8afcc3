#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "trialbridge/dataset.hpp"
#include "trialbridge/engines.hpp"

namespace trialbridge {

enum class Scenario { Generalizability, Transportability };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& s);

inline constexpr double kPsLowerClamp = 1e-6;
inline constexpr double kPsUpperClamp = 1.0 - 1e-6;

struct PsModelSpec {
  ModelFamily family = ModelFamily::Logistic;
  std::vector<std::string> covariates;
  ForestParams forest;
};

/// Sampling score Pr(S = 1 | X) for every row of the stacked table.
struct PropensityFit {
  Scenario scenario = Scenario::Transportability;
  FittedModel model;
  std::vector<double> ps;
  std::vector<int> s;
  std::vector<std::string> unit_ids;
  std::size_t clamped_low = 0;
  std::size_t clamped_high = 0;
  std::string population;

  std::vector<double> ps_trial() const;
  std::vector<double> ps_target() const;
};

/// Fits the sampling-score model on the stacked table. Under
/// generalizability the target file is taken to be the full target
/// population; trial membership in it is the caller's responsibility.
PropensityFit estimate_sampling_score(const StudyTable& stacked, const PsModelSpec& spec,
                                      Scenario scenario);

/// Builds a fit from externally supplied scores (clamping applied).
PropensityFit propensity_from_scores(const StudyTable& stacked, std::vector<double> ps,
                                     Scenario scenario, FittedModel model = {});

struct TrimCap {
  double p_lo = 0.0;   // percent, nearest rank
  double p_hi = 100.0;
};
struct Normalize {};
using WeightStep = std::variant<TrimCap, Normalize>;

struct WeightPolicy {
  std::vector<WeightStep> steps;

  static WeightPolicy none() { return {}; }
  /// Normalize to mean one, no trimming.
  static WeightPolicy standard() { return WeightPolicy{{Normalize{}}}; }
};

struct WeightStepRecord {
  std::string kind;
  double p_lo = 0.0, p_hi = 0.0;
  double lower = 0.0, upper = 0.0;
  std::size_t affected = 0;
};

/// Per-unit weights aligned with the stacked table; target rows carry 0.
struct WeightSet {
  Scenario scheme = Scenario::Transportability;
  std::vector<double> w;
  std::vector<int> s;
  std::vector<std::string> unit_ids;
  std::vector<WeightStepRecord> history;
  bool normalized = false;

  /// (sum w)^2 / sum w^2 over trial units.
  double effective_sample_size() const;
  std::size_t n_trial() const;
  std::vector<double> trial_weights() const;
};

/// 1/ps (generalizability) or (1 - ps)/ps (transportability) on trial rows.
WeightSet make_weights(const PropensityFit& fit);

/// Applies the policy steps in order. Percentile caps use nearest rank on the
/// positive trial weights; normalization divides by their mean.
WeightSet trim_stabilize(const WeightSet& weights, const WeightPolicy& policy);

struct ModifierRange {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  double trial_min = 0.0, trial_max = 0.0;
  double target_min = 0.0, target_max = 0.0;
  std::vector<std::string> target_only_levels;
  bool violation = false;
  std::size_t violating_units = 0;
};

struct PositivityAudit {
  double ps_trial_min = 0.0, ps_trial_max = 0.0;
  double ps_target_min = 0.0, ps_target_max = 0.0;
  std::size_t trial_below_clamp = 0;
  std::size_t trial_above_clamp = 0;
  std::vector<ModifierRange> modifiers;
};

/// Score extremes plus the effect-modifier range check: every target value
/// must lie inside the trial range (continuous, binary) or the trial level
/// set (categorical).
PositivityAudit positivity_audit(const PropensityFit& fit, const StudyTable& stacked,
                                 const std::vector<std::string>& modifiers);

nlohmann::json to_json(const PositivityAudit& audit);
nlohmann::json to_json(const WeightSet& weights);
std::string weights_csv(const WeightSet& weights);

}  // namespace trialbridge
