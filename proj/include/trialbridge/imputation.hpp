#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialbridge/dataset.hpp"
#include "trialbridge/estimators.hpp"

namespace trialbridge {

enum class ImputeMethod { Pmm, Logistic, Polytomous };

struct MiceConfig {
  int m = 20;
  int iterations = 10;
  int pmm_k = 5;
  std::uint64_t seed = 0;
  /// Overrides of the default method per variable (continuous -> PMM,
  /// binary -> logistic, categorical -> one-vs-rest logistic).
  std::map<std::string, ImputeMethod> methods;
  /// Minimum observed cells required for every incomplete variable.
  std::size_t min_observed = 20;
};

struct ImputationSet {
  std::vector<StudyTable> completed;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> order;  // variables in visiting order
  std::map<std::string, ImputeMethod> methods;
  std::vector<std::string> predictors;  // imputation-model terms besides covariates
  /// chain_means[variable][chain][iteration] (iteration 0 = initial fill).
  std::map<std::string, std::vector<std::vector<double>>> chain_means;
};

/// Chained equations over the stacked table. Each incomplete covariate is
/// regressed on the other covariates plus S, T*S, Y*S and the products of S
/// and T*S with every other covariate. Trial and target rows thus get their
/// own slopes, and trial-only variables never place values on target rows.
/// Chains run in parallel with independent substreams.
ImputationSet mice(const StudyTable& stacked, const MiceConfig& config);

/// One chain (used for nested bootstrap). `chain` selects the substream.
StudyTable impute_once(const StudyTable& stacked, const MiceConfig& config, std::size_t chain,
                       std::map<std::string, std::vector<double>>* chain_means = nullptr);

struct PooledEstimate {
  double point = kMissing;
  double within = kMissing;
  double between = kMissing;
  double total = kMissing;
  double df = kMissing;  // +inf when between == 0
  double ci_lo = kMissing;
  double ci_hi = kMissing;
  int m = 0;
  std::vector<double> points;
  std::vector<double> variances;
};

/// Rubin's rules: T = W + (1 + 1/M) B with Rubin's degrees of freedom;
/// t-quantile interval (normal when B == 0).
PooledEstimate rubin_pool(const std::vector<double>& points, const std::vector<double>& variances,
                          double alpha = 0.05);

/// Full analysis in each completed table, pooled.
PooledEstimate psi_within(const ImputationSet& imps, const AnalysisSpec& spec, std::uint64_t seed);

/// Scores estimated per completed table and averaged unit-wise; a single
/// effect estimate from the averaged scores on the first completed table.
/// Bootstrap variance resamples units and repeats the per-table score fits
/// and averaging within every replicate.
EffectEstimate psi_across(const ImputationSet& imps, const AnalysisSpec& spec, std::uint64_t seed);

/// Outer stratified bootstrap; each replicate runs a single imputation chain
/// then the point analysis.
EffectEstimate mi_boot(const StudyTable& stacked, const MiceConfig& config,
                       const AnalysisSpec& spec, int B, std::uint64_t seed);

/// Rows with no missing covariate cell.
StudyTable complete_cases(const StudyTable& table);

nlohmann::json to_json(const PooledEstimate& pooled);
nlohmann::json imputation_diagnostics(const ImputationSet& imps);
std::string to_string(ImputeMethod m);

}  // namespace trialbridge
