#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialbridge/dataset.hpp"
#include "trialbridge/estimators.hpp"
#include "trialbridge/imputation.hpp"
#include "trialbridge/verdict.hpp"
#include "trialbridge/weighting.hpp"

namespace trialbridge {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kReportSchemaTag = "trialbridge.report/1";

enum class MissingStrategy { PsiWithin, PsiAcross, CompleteCase };
std::string to_string(MissingStrategy s);

struct EstimatorRequest {
  Method method = Method::Ipsw;
  VarianceKind variance = VarianceKind::Sandwich;
};

struct PipelineConfig {
  std::filesystem::path trial_csv;
  std::filesystem::path target_csv;
  std::filesystem::path schema_json;
  std::filesystem::path output_dir;
  Scenario scenario = Scenario::Transportability;

  ModelFamily ps_family = ModelFamily::Logistic;
  ForestParams forest;
  std::optional<std::vector<std::string>> ps_covariates;  // default: in_ps_model

  OutcomeType outcome_type = OutcomeType::Continuous;
  std::optional<std::vector<std::string>> outcome_covariates;  // default: in_outcome_model
  bool outcome_saturated = false;
  std::optional<double> e_trial;

  std::vector<EstimatorRequest> estimators;
  WeightPolicy policy = WeightPolicy::standard();

  double smd_threshold = 0.1;
  std::optional<double> delta_p_gate;
  std::optional<std::vector<std::string>> modifiers;  // default: effect-modifier candidates
  std::vector<std::string> subgroups;

  MissingStrategy missing = MissingStrategy::PsiWithin;
  MiceConfig mice;
  bool mi_bootstrap = false;

  int bootstrap_replicates = 200;
  BootFlavor flavor = BootFlavor::Percentile;
  double alpha = 0.05;
  std::optional<DesignThreshold> design;
  std::vector<ScenarioSpec> sensitivity;
  std::map<std::string, bool> checklist;

  std::uint64_t seed = 0;
  std::vector<std::string> formats{"json", "markdown"};
  nlohmann::json echo;
};

/// Every violation found, without touching data files. Empty means valid.
std::vector<std::string> validate_config(const nlohmann::json& j);
std::vector<std::string> validate_config_file(const std::filesystem::path& path);

/// Validates then converts. Relative paths resolve against `base_dir`.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

struct RunReport {
  nlohmann::json body;
  std::map<std::string, double> timing_ms;
  std::string weights_csv;
};

/// load -> harmonize -> missingness -> (imputation) -> stack -> score ->
/// weights -> audit -> similarity -> estimates -> verdict -> sensitivity.
/// Errors are rethrown with the failing step in the message.
RunReport run(const PipelineConfig& config);

/// Loads data and reports similarity diagnostics only.
nlohmann::json check_balance(const PipelineConfig& config);

/// Canonical JSON: sorted keys, doubles rounded to 6 significant digits,
/// non-finite numbers as null.
nlohmann::json canonicalize(const nlohmann::json& j);
std::string canonical_dump(const nlohmann::json& j);

std::string render_markdown(const nlohmann::json& report);
std::string render_ps_density_svg(const nlohmann::json& report);
std::string render_smd_svg(const nlohmann::json& report);

/// Writes the requested formats (json, markdown, svg, weights) into `dir`
/// and returns the written paths. IO failures raise ErrorKind::Io.
std::vector<std::filesystem::path> emit_report(const RunReport& report,
                                               const std::vector<std::string>& formats,
                                               const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic data

struct DgpCovariate {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;  // continuous: normal; binary: Bernoulli
  double mean = 0.0;          // target mean (probability for binary)
  double sd = 1.0;
  double selection = 0.0;     // log-odds of trial membership per unit
  double outcome = 0.0;       // main effect on Y
  double modification = 0.0;  // treatment-effect modification
};

enum class MissingKind { None, Mcar, Mar };

struct MissingMechanism {
  MissingKind kind = MissingKind::None;
  std::vector<std::string> variables;
  double rate = 0.0;
  std::string depends_on;  // MAR only
};

struct DgpSpec {
  std::size_t n_trial = 1000;
  std::size_t n_target = 10000;
  std::vector<DgpCovariate> covariates;
  double outcome_intercept = 0.0;
  double effect_baseline = 1.0;
  double noise_sd = 1.0;
  double treat_prob = 0.5;
  MissingMechanism missingness;

  /// baseline + sum modification_j * E_target[X_j].
  double true_pate() const;
  /// Intercept of the logistic Pr(S = 1 | X) in the stacked table.
  double stacked_selection_intercept() const;
  Schema schema() const;
};

struct SyntheticData {
  StudyTable trial;
  StudyTable target;
  StudyTable trial_full;   // before masking
  StudyTable target_full;
  double true_pate = 0.0;
};

/// Target covariates are drawn from the stated independent normals and
/// Bernoullis. Trial covariates are drawn from the same law exponentially
/// tilted by the selection coefficients, which makes Pr(S = 1 | X) in the
/// stacked table exactly logistic with those slopes. Treatment is randomized
/// with probability treat_prob; Y = intercept + sum outcome_j X_j +
/// T (baseline + sum modification_j X_j) + N(0, noise_sd^2).
SyntheticData generate_synthetic(const DgpSpec& spec, std::uint64_t seed);

DgpSpec dgp_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DgpSpec& spec);

/// The covariate-shift design used by the demo data and the test suites:
/// x1 ~ N(1, 1) modifier, x2 ~ N(0, 1), x3 ~ Bernoulli(0.4); true PATE 1.5.
DgpSpec reference_dgp(std::size_t n_trial = 1000, std::size_t n_target = 10000);

}  // namespace trialbridge
