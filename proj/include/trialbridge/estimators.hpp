#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialbridge/dataset.hpp"
#include "trialbridge/rng.hpp"
#include "trialbridge/weighting.hpp"

namespace trialbridge {

enum class Estimand { TATE, PATE };
enum class Method { DifferenceInMeans, Ipsw, Gcomp, Dr };
enum class VarianceKind { None, Analytic, Sandwich, Bootstrap, Rubin, Carried };
enum class BootFlavor { Percentile, Normal };

std::string to_string(Estimand e);
std::string to_string(Method m);
std::string to_string(VarianceKind v);
std::string to_string(BootFlavor f);
Method parse_method(const std::string& s);
BootFlavor parse_flavor(const std::string& s);

struct VarianceInfo {
  VarianceKind kind = VarianceKind::None;
  int replicates = 0;
  std::uint64_t seed = 0;
  BootFlavor flavor = BootFlavor::Percentile;
  std::size_t failed = 0;
};

/// Point estimate on the mean (or risk) difference scale with its interval.
struct EffectEstimate {
  Estimand estimand = Estimand::PATE;
  Method method = Method::Ipsw;
  double point = kMissing;
  double se = kMissing;
  double ci_lo = kMissing;
  double ci_hi = kMissing;
  double level = 0.95;
  VarianceInfo variance;
  std::size_t n_trial = 0;
  std::size_t n_target = 0;
  bool degenerate = false;
  std::vector<std::string> flags;
};

/// Fills se and a normal-quantile interval; se == 0 marks the estimate
/// degenerate.
void set_normal_interval(EffectEstimate& est, double se, double alpha);

enum class OutcomeType { Continuous, Binary };

struct OutcomeSpec {
  OutcomeType type = OutcomeType::Continuous;
  std::vector<std::string> covariates;
  bool saturated = false;
};

/// Difference in arm means over the trial rows of `table` with the Neyman
/// standard error sqrt(s1^2/n1 + s0^2/n0).
EffectEstimate tate(const StudyTable& table, double alpha = 0.05);

/// Hajek IPSW contrast over trial rows of `stacked`, with the HC0 sandwich
/// standard error of the weighted regression of y on (1, T).
EffectEstimate ipsw_pate(const StudyTable& stacked, const WeightSet& weights,
                         double alpha = 0.05);

/// Arm-specific outcome models fit on the trial, averaged over target rows.
/// Returns the point only; the interval comes from bootstrap_ci.
EffectEstimate gcomp_pate(const StudyTable& stacked, const OutcomeSpec& outcome);

/// g-computation plus the weighted, normalized augmentation
/// sum w psi / sum w with psi = (T/e - (1-T)/(1-e)) (Y - m_T(X)).
/// `e_trial` defaults to the observed treated fraction.
EffectEstimate dr_pate(const StudyTable& stacked, const WeightSet& weights,
                       const OutcomeSpec& outcome, std::optional<double> e_trial = std::nullopt);

struct BootstrapResult {
  double se = kMissing;
  double ci_lo = kMissing;
  double ci_hi = kMissing;
  std::vector<double> replicates;  // successful replicates, replicate order
  std::size_t failed = 0;
  std::vector<std::string> failure_causes;
  bool degenerate = false;
};

/// Re-runs `procedure` on B stratified resamples (trial and target rows
/// resampled independently). Replicate b draws from substream (seed, b), so
/// the result is independent of the worker count. More than 10% failed
/// replicates is an error. The normal flavor centres on `point`, computed
/// from the original data when not supplied.
using Procedure = std::function<double(const StudyTable&, std::uint64_t replicate_seed)>;
BootstrapResult bootstrap_ci(const StudyTable& stacked, const Procedure& procedure, int B,
                             std::uint64_t seed, BootFlavor flavor, double alpha = 0.05,
                             std::optional<double> point = std::nullopt);

/// Stratified resample of a stacked table.
StudyTable bootstrap_resample(const StudyTable& stacked, Rng& rng);

/// One complete estimation procedure: sampling score, weights, effect.
struct AnalysisSpec {
  Scenario scenario = Scenario::Transportability;
  PsModelSpec ps;
  WeightPolicy policy = WeightPolicy::standard();
  Method method = Method::Ipsw;
  OutcomeSpec outcome;
  std::optional<double> e_trial;
  VarianceKind variance = VarianceKind::Sandwich;
  int bootstrap_replicates = 200;
  BootFlavor flavor = BootFlavor::Percentile;
  double alpha = 0.05;
};

/// Point estimate only; `seed` feeds stochastic model families (forest).
double analysis_point(const StudyTable& stacked, const AnalysisSpec& spec, std::uint64_t seed);

/// Point estimate when scores are already known (skips the score fit).
double estimate_with_scores(const StudyTable& stacked, const PropensityFit& fit,
                            const AnalysisSpec& spec);

/// Point plus the configured variance (sandwich for IPSW, bootstrap with
/// the score model refit per replicate otherwise).
EffectEstimate analyze(const StudyTable& stacked, const AnalysisSpec& spec, std::uint64_t seed);

struct SubgroupBin {
  std::string label;
  std::size_t n = 0, n_treated = 0, n_control = 0;
  std::optional<EffectEstimate> estimate;
  bool flagged = false;
};

struct SubgroupTable {
  std::string covariate;
  std::vector<SubgroupBin> bins;
  std::string note;
};

/// Exploratory per-level (or per-quantile-bin) difference in means on trial
/// rows. No multiplicity adjustment. Bins missing an arm are flagged.
SubgroupTable subgroup_effects(const StudyTable& table, const std::string& covariate,
                               int quantile_bins = 4, double alpha = 0.05);

nlohmann::json to_json(const EffectEstimate& est);
EffectEstimate effect_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SubgroupTable& table);

}  // namespace trialbridge
