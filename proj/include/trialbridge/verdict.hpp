#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "trialbridge/estimators.hpp"
#include "trialbridge/similarity.hpp"
#include "trialbridge/weighting.hpp"

namespace trialbridge {

enum class Direction { Increase, Decrease };

struct DesignThreshold {
  Direction direction = Direction::Increase;
  double magnitude = 0.0;
};

struct AgreementVerdict {
  bool regulatory = false;
  bool estimate = false;
  std::optional<bool> design;
  Measure standardized_difference;
  EffectEstimate tate;
  EffectEstimate pate;
};

/// Estimate built from a published point and interval. The SD is recovered
/// as half-width / z when not supplied.
EffectEstimate published_estimate(Estimand estimand, double point, double ci_lo, double ci_hi,
                                  std::optional<double> sd = std::nullopt, double level = 0.95);

/// Significance means the interval excludes zero. Agreement holds when both
/// are significant with the same sign, or neither is significant.
bool regulatory_agreement(const EffectEstimate& tate, const EffectEstimate& pate);

/// PATE point inside the closed TATE interval.
bool estimate_agreement(const EffectEstimate& tate, const EffectEstimate& pate);

bool design_agreement(const EffectEstimate& pate, const DesignThreshold& threshold);

/// (pate - tate) / sqrt(sd_tate^2 + sd_pate^2).
Measure standardized_difference(const EffectEstimate& tate, const EffectEstimate& pate);

AgreementVerdict compare_effects(const EffectEstimate& tate, const EffectEstimate& pate,
                                 const std::optional<DesignThreshold>& threshold = std::nullopt);

/// Additive shift from a hypothetical binary modifier U:
/// point + delta_u * (prev_target - prev_trial). SE carried over and flagged.
EffectEstimate adjust_unmeasured_modifier(const EffectEstimate& pate, double delta_u,
                                          double prev_trial, double prev_target);

struct UnmeasuredModifier {
  double delta_u = 0.0;
  double prev_trial = 0.0;
  double prev_target = 0.0;
};
struct DropCovariates {
  std::vector<std::string> names;
};
struct TrimmingPolicy {
  WeightPolicy policy;
};
struct AlternateEstimator {
  Method method = Method::Ipsw;
};
struct AlternateOutcomeCutoff {
  double cutoff = 0.0;
};
struct CompleteCaseToggle {};

using Perturbation = std::variant<UnmeasuredModifier, DropCovariates, TrimmingPolicy,
                                  AlternateEstimator, AlternateOutcomeCutoff, CompleteCaseToggle>;

struct ScenarioSpec {
  std::string label;
  Perturbation perturbation;
};

std::string perturbation_name(const Perturbation& p);

/// TATE and the PATE under one pipeline configuration.
struct ScenarioOutcome {
  EffectEstimate tate;
  EffectEstimate pate;
};

/// Re-executes the pipeline with one perturbation applied; nullptr is the
/// unperturbed base.
using ScenarioRunner = std::function<ScenarioOutcome(const ScenarioSpec*)>;

struct ScenarioRow {
  std::string label;
  std::string perturbation;
  std::optional<EffectEstimate> tate;
  std::optional<EffectEstimate> pate;
  std::optional<AgreementVerdict> verdict;
  std::string error;
};

/// Base row first, then one row per spec in spec order. Unmeasured-modifier
/// rows adjust the base PATE without rerunning. Failures are recorded per row.
std::vector<ScenarioRow> run_scenarios(const ScenarioRunner& runner,
                                       const std::vector<ScenarioSpec>& specs,
                                       const std::optional<DesignThreshold>& threshold = std::nullopt);

nlohmann::json to_json(const AgreementVerdict& v);
nlohmann::json to_json(const ScenarioRow& row);
nlohmann::json to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const nlohmann::json& j);
WeightPolicy weight_policy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const WeightPolicy& policy);

}  // namespace trialbridge
