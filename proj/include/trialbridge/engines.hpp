#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "trialbridge/dataset.hpp"

namespace trialbridge {

inline constexpr const char* kInterceptLabel = "(Intercept)";

/// Numeric model matrix: an intercept column followed by expanded covariates.
/// Categorical covariates use reference coding against their first level.
struct DesignMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> labels;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Builds the design for the named covariates. With `saturated`, every
/// product of indicator/continuous columns drawn from distinct covariates is
/// added, so discrete covariates get one free parameter per cell. Throws when
/// any used cell is missing.
DesignMatrix build_design(const StudyTable& table, const std::vector<std::string>& covariates,
                          bool saturated = false);

enum class ModelFamily { Linear, Logistic, Forest };

std::string to_string(ModelFamily f);
ModelFamily parse_family(const std::string& s);

struct Convergence {
  bool converged = true;
  int iterations = 0;
  double final_change = 0.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf positive fraction
};

struct Tree {
  std::vector<TreeNode> nodes;
};

struct ForestParams {
  int n_trees = 500;
  int max_depth = -1;  // unbounded
  int min_leaf = 5;
  int mtry = 0;        // 0 means ceil(sqrt(p))
  std::uint64_t seed = 0;
};

struct FittedModel {
  ModelFamily family = ModelFamily::Linear;
  Eigen::VectorXd coef;
  std::vector<Tree> trees;
  Convergence convergence;
  bool separation = false;
  std::vector<std::string> labels;
  std::vector<std::string> warnings;
  std::vector<Eigen::Index> dropped_columns;
  /// Linear: (X'WX)^-1 over the retained columns (zero rows/cols for dropped
  /// ones). Logistic: inverse Fisher information at the estimate.
  Eigen::MatrixXd unscaled_cov;
  /// Linear only: weighted residual variance, sum w r^2 / (n_eff - rank).
  double sigma2 = 0.0;
  /// Logistic only: weighted log-likelihood after every accepted iteration,
  /// starting with the value at the initial point.
  std::vector<double> loglik_trace;
};

/// Weighted least squares via column-pivoted Householder QR on sqrt(w) X.
/// Redundant columns get a zero coefficient and a warning.
FittedModel fit_linear(const DesignMatrix& X, std::span<const double> y,
                       std::span<const double> w = {});

struct LogisticOptions {
  int max_iter = 100;
  double tol = 1e-8;
  int max_halvings = 10;
  double separation_bound = 15.0;
};

/// Weighted logistic regression by IRLS with step-halving.
FittedModel fit_logistic(const DesignMatrix& X, std::span<const double> y,
                         std::span<const double> w = {}, const LogisticOptions& opts = {});

/// Bagged CART classifier with Gini splits and per-split feature sampling.
/// Trees are grown from per-tree seeded substreams, so the ensemble does not
/// depend on the worker count.
FittedModel fit_forest(const DesignMatrix& X, std::span<const double> y,
                       const ForestParams& params = {});

/// Linear predictor for linear models; probabilities for logistic and forest.
std::vector<double> predict(const FittedModel& model, const DesignMatrix& X);

/// Weighted Bernoulli log-likelihood for a coefficient vector.
double logistic_loglik(const DesignMatrix& X, std::span<const double> y,
                       std::span<const double> w, const Eigen::VectorXd& beta);

nlohmann::json to_json(const FittedModel& model);

}  // namespace trialbridge
