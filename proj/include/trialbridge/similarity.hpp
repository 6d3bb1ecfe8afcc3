#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialbridge/dataset.hpp"
#include "trialbridge/weighting.hpp"

namespace trialbridge {

/// A statistic that may be undefined (zero pooled spread, degenerate input).
/// Undefined values serialize as null with a flag instead of aborting.
struct Measure {
  double value = kMissing;
  bool defined = false;

  static Measure of(double v) { return {v, true}; }
  static Measure undefined() { return {}; }
};

enum class TiptonCategory { VeryHigh, High, Medium, Low };

std::string to_string(TiptonCategory c);
/// Interpretation attached to each category in reports.
std::string interpretation(TiptonCategory c);

/// Standardized mean difference, trial minus target, over the pooled SD
/// sqrt((v_trial + v_target) / 2). Binary covariates use p(1 - p). When trial
/// weights are given only trial moments are weighted. Missing cells are
/// skipped.
Measure smd(std::span<const double> trial, std::span<const double> target, bool binary,
            std::span<const double> trial_weights = {});

/// One SMD per non-reference level of a categorical covariate (level
/// indicators compared as binary variables).
std::vector<Measure> smd_categorical(std::span<const double> trial, std::span<const double> target,
                                     std::size_t n_levels,
                                     std::span<const double> trial_weights = {});

Measure standardized_delta_p(const PropensityFit& fit);

enum class PsScale { Probability, Logit };

struct TiptonResult {
  Measure index;
  std::optional<TiptonCategory> category;
};

/// Overlap integral of the two score densities. Densities are Gaussian KDEs
/// with Silverman bandwidths evaluated on a 512-point grid, renormalized by
/// the trapezoid rule. On the probability scale the grid is [0, 1] with
/// reflection at both boundaries; on the logit scale the grid spans the
/// pooled sample range padded by four bandwidths.
TiptonResult tipton_index(std::span<const double> trial_ps, std::span<const double> target_ps,
                          PsScale scale = PsScale::Probability);
TiptonResult tipton_index(const PropensityFit& fit, PsScale scale = PsScale::Probability);

TiptonCategory classify_tipton(double index);

/// Density curve on the probability scale, for plotting.
struct DensityCurve {
  std::vector<double> grid;
  std::vector<double> density;
};
DensityCurve ps_density(std::span<const double> ps, std::size_t points = 512);

struct SmdRow {
  std::string covariate;  // "name" or "name[level]" for categorical levels
  Measure unweighted;
  std::optional<Measure> weighted;
  bool flagged = false;
};

struct SimilarityReport {
  std::vector<SmdRow> rows;
  Measure standardized_delta_p;
  Measure tipton;
  std::optional<TiptonCategory> tipton_category;
  double smd_threshold = 0.1;
  std::vector<std::string> flagged;
  DensityCurve density_trial;
  DensityCurve density_target;
};

/// Flags use the weighted SMD when weights are supplied, otherwise the
/// unweighted SMD.
SimilarityReport similarity_report(const StudyTable& stacked, const PropensityFit& fit,
                                   const WeightSet* weights, double smd_threshold = 0.1);

nlohmann::json to_json(const SimilarityReport& report);
std::string similarity_markdown(const nlohmann::json& similarity);

}  // namespace trialbridge
