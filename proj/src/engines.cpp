#include "trialbridge/engines.hpp"

#include <algorithm>
#include <cmath>

#include "trialbridge/error.hpp"
#include "trialbridge/stats.hpp"

namespace trialbridge {

namespace {

struct ColumnGroup {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> columns;
};

ColumnGroup expand(const StudyTable& table, const std::string& name) {
  const auto j = table.index_of(name);
  const auto& cov = table.schema[j];
  const auto& col = table.x[j];
  for (double v : col) {
    if (is_missing(v)) {
      fail(ErrorKind::Model, "missing value in covariate '" + name + "'; impute or subset before modeling");
    }
  }
  ColumnGroup g;
  if (cov.kind == CovariateKind::Categorical) {
    for (std::size_t k = 1; k < cov.levels.size(); ++k) {
      g.labels.push_back(name + "[" + cov.levels[k] + "]");
      std::vector<double> ind(col.size());
      for (std::size_t i = 0; i < col.size(); ++i) ind[i] = col[i] == static_cast<double>(k) ? 1.0 : 0.0;
      g.columns.push_back(std::move(ind));
    }
  } else {
    g.labels.push_back(name);
    g.columns.push_back(col);
  }
  return g;
}

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

void check_weights(std::span<const double> w, std::size_t n) {
  if (w.size() != n) fail(ErrorKind::Model, "weight vector length does not match the design");
  bool any = false;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::Model, "weights must be finite and non-negative");
    any = any || v > 0.0;
  }
  if (!any) fail(ErrorKind::Model, "all weights are zero");
}

double softplus(double eta) { return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta))); }

}  // namespace

DesignMatrix build_design(const StudyTable& table, const std::vector<std::string>& covariates, bool saturated) {
  const std::size_t n = table.size();
  std::vector<ColumnGroup> groups;
  for (const auto& c : covariates) groups.push_back(expand(table, c));

  std::vector<std::string> labels{kInterceptLabel};
  std::vector<std::vector<double>> cols{ones(n)};
  if (!saturated) {
    for (auto& g : groups) {
      for (std::size_t k = 0; k < g.labels.size(); ++k) {
        labels.push_back(g.labels[k]);
        cols.push_back(std::move(g.columns[k]));
      }
    }
  } else {
    // Enumerate, for every subset of groups, every choice of one column per
    // group. Subsets are visited in increasing bitmask order.
    const std::size_t G = groups.size();
    if (G > 16) fail(ErrorKind::Model, "saturated design supports at most 16 covariates");
    for (std::size_t mask = 1; mask < (std::size_t{1} << G); ++mask) {
      std::vector<std::size_t> members;
      for (std::size_t g = 0; g < G; ++g) {
        if (mask & (std::size_t{1} << g)) members.push_back(g);
      }
      std::vector<std::size_t> pick(members.size(), 0);
      for (;;) {
        std::string label;
        std::vector<double> prod = ones(n);
        for (std::size_t m = 0; m < members.size(); ++m) {
          const auto& g = groups[members[m]];
          label += (m ? ":" : "") + g.labels[pick[m]];
          const auto& c = g.columns[pick[m]];
          for (std::size_t i = 0; i < n; ++i) prod[i] *= c[i];
        }
        labels.push_back(label);
        cols.push_back(std::move(prod));
        std::size_t m = 0;
        while (m < members.size() && ++pick[m] == groups[members[m]].labels.size()) pick[m++] = 0;
        if (m == members.size()) break;
      }
    }
  }

  DesignMatrix X;
  X.labels = std::move(labels);
  X.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    for (std::size_t i = 0; i < n; ++i) X.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = cols[c][i];
  }
  return X;
}

std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::Linear: return "linear";
    case ModelFamily::Logistic: return "logistic";
    case ModelFamily::Forest: return "forest";
  }
  return "?";
}

ModelFamily parse_family(const std::string& s) {
  if (s == "linear") return ModelFamily::Linear;
  if (s == "logistic") return ModelFamily::Logistic;
  if (s == "forest") return ModelFamily::Forest;
  fail(ErrorKind::Config, "unknown model family '" + s + "'");
}

// ---------------------------------------------------------------------------

FittedModel fit_linear(const DesignMatrix& X, std::span<const double> y, std::span<const double> w) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (static_cast<Eigen::Index>(y.size()) != n) fail(ErrorKind::Model, "outcome length does not match the design");
  std::vector<double> unit;
  if (w.empty()) {
    unit = ones(static_cast<std::size_t>(n));
    w = unit;
  }
  check_weights(w, static_cast<std::size_t>(n));
  const auto n_pos = static_cast<Eigen::Index>(std::count_if(w.begin(), w.end(), [](double v) { return v > 0.0; }));
  if (n_pos < p) {
    fail(ErrorKind::Model, "underdetermined linear model: " + std::to_string(n_pos) + " weighted rows for " +
                               std::to_string(p) + " columns");
  }

  Eigen::VectorXd sw(n), yv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sw(i) = std::sqrt(w[static_cast<std::size_t>(i)]);
    yv(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::MatrixXd A = sw.asDiagonal() * X.values;
  const Eigen::VectorXd b = sw.cwiseProduct(yv);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.rows(), A.cols());
  qr.setThreshold(1e-10);
  qr.compute(A);
  const Eigen::Index rank = qr.rank();

  FittedModel m;
  m.family = ModelFamily::Linear;
  m.labels = X.labels;
  m.coef = qr.solve(b);
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = rank; k < p; ++k) {
    m.dropped_columns.push_back(perm(k));
    m.coef(perm(k)) = 0.0;
    m.warnings.push_back("rank-deficient design: column '" + X.labels[static_cast<std::size_t>(perm(k))] +
                         "' is redundant; coefficient set to 0");
  }
  std::sort(m.dropped_columns.begin(), m.dropped_columns.end());

  m.unscaled_cov = Eigen::MatrixXd::Zero(p, p);
  if (rank > 0) {
    const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(rank, rank).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv =
        R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(rank, rank));
    const Eigen::MatrixXd cov = Rinv * Rinv.transpose();
    for (Eigen::Index a = 0; a < rank; ++a) {
      for (Eigen::Index c = 0; c < rank; ++c) m.unscaled_cov(perm(a), perm(c)) = cov(a, c);
    }
  }
  const Eigen::VectorXd resid = b - A * m.coef;
  m.sigma2 = n_pos > rank ? resid.squaredNorm() / static_cast<double>(n_pos - rank) : 0.0;
  m.convergence = {true, 1, 0.0};
  return m;
}

double logistic_loglik(const DesignMatrix& X, std::span<const double> y, std::span<const double> w,
                       const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X.values * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
    if (wi == 0.0) continue;
    ll += wi * (y[static_cast<std::size_t>(i)] * eta(i) - softplus(eta(i)));
  }
  return ll;
}

FittedModel fit_logistic(const DesignMatrix& X, std::span<const double> y, std::span<const double> w,
                         const LogisticOptions& opts) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (static_cast<Eigen::Index>(y.size()) != n) fail(ErrorKind::Model, "outcome length does not match the design");
  std::vector<double> unit;
  if (w.empty()) {
    unit = ones(static_cast<std::size_t>(n));
    w = unit;
  }
  check_weights(w, static_cast<std::size_t>(n));
  double w1 = 0.0, w0 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    if (yi != 0.0 && yi != 1.0) fail(ErrorKind::Model, "logistic outcome must be 0 or 1");
    (yi == 1.0 ? w1 : w0) += w[static_cast<std::size_t>(i)];
  }
  if (w1 == 0.0 || w0 == 0.0) fail(ErrorKind::Model, "degenerate logistic outcome: only one class present");

  Eigen::VectorXd yv(n), wv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    yv(i) = y[static_cast<std::size_t>(i)];
    wv(i) = w[static_cast<std::size_t>(i)];
  }

  FittedModel m;
  m.family = ModelFamily::Logistic;
  m.labels = X.labels;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = logistic_loglik(X, y, w, beta);
  m.loglik_trace.push_back(ll);
  bool ridge_warned = false;

  auto information = [&](const Eigen::VectorXd& b, Eigen::VectorXd* grad) {
    const Eigen::VectorXd eta = X.values * b;
    Eigen::VectorXd prob(n), curv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob(i) = stats::expit(eta(i));
      curv(i) = wv(i) * prob(i) * (1.0 - prob(i));
    }
    if (grad) *grad = X.values.transpose() * (wv.cwiseProduct(yv - prob));
    return Eigen::MatrixXd(X.values.transpose() * curv.asDiagonal() * X.values);
  };
  auto solve_info = [&](Eigen::MatrixXd H, const Eigen::MatrixXd& rhs) -> Eigen::MatrixXd {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13) {
      if (!ridge_warned) {
        m.warnings.push_back("weighted information matrix is singular; added 1e-8 to the diagonal");
        ridge_warned = true;
      }
      H.diagonal().array() += 1e-8;
      ldlt.compute(H);
    }
    return ldlt.solve(rhs);
  };

  m.convergence = {false, 0, 0.0};
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    Eigen::VectorXd grad;
    const Eigen::MatrixXd H = information(beta, &grad);
    const Eigen::VectorXd delta = solve_info(H, grad);

    double step = 1.0;
    Eigen::VectorXd candidate = beta + delta;
    double ll_new = logistic_loglik(X, y, w, candidate);
    int halvings = 0;
    while (!(ll_new >= ll) && halvings < opts.max_halvings) {
      step *= 0.5;
      candidate = beta + step * delta;
      ll_new = logistic_loglik(X, y, w, candidate);
      ++halvings;
    }
    m.convergence.iterations = iter;
    if (!(ll_new >= ll)) {
      // No ascent direction left at floating-point resolution.
      m.convergence.final_change = 0.0;
      m.convergence.converged = true;
      break;
    }
    const double change = (candidate - beta).cwiseAbs().maxCoeff();
    beta = candidate;
    ll = ll_new;
    m.loglik_trace.push_back(ll);
    m.convergence.final_change = change;
    if (change < opts.tol) {
      m.convergence.converged = true;
      break;
    }
  }

  m.coef = beta;
  const Eigen::MatrixXd H = information(beta, nullptr);
  m.unscaled_cov = solve_info(H, Eigen::MatrixXd::Identity(p, p));

  const bool large = p > 0 && beta.cwiseAbs().maxCoeff() > opts.separation_bound;
  bool saturated_probs = false;
  if (large) {
    const Eigen::VectorXd eta = X.values * beta;
    for (Eigen::Index i = 0; i < n && !saturated_probs; ++i) {
      saturated_probs = std::abs(eta(i)) > 30.0;
    }
  }
  if (large && (!m.convergence.converged || saturated_probs)) {
    m.separation = true;
    m.warnings.push_back("possible complete or quasi-complete separation: |coefficient| > " +
                         std::to_string(static_cast<int>(opts.separation_bound)));
  } else if (!m.convergence.converged) {
    m.warnings.push_back("IRLS did not converge within " + std::to_string(opts.max_iter) + " iterations");
  }
  return m;
}

std::vector<double> predict_forest(const FittedModel& model, const DesignMatrix& X);

std::vector<double> predict(const FittedModel& model, const DesignMatrix& X) {
  if (X.labels != model.labels) {
    fail(ErrorKind::Model, "prediction design columns do not match the training columns");
  }
  if (model.family == ModelFamily::Forest) return predict_forest(model, X);
  const Eigen::VectorXd eta = X.values * model.coef;
  std::vector<double> out(static_cast<std::size_t>(eta.size()));
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    out[static_cast<std::size_t>(i)] = model.family == ModelFamily::Logistic ? stats::expit(eta(i)) : eta(i);
  }
  return out;
}

nlohmann::json to_json(const FittedModel& model) {
  nlohmann::json j{{"family", to_string(model.family)},
                   {"labels", model.labels},
                   {"convergence",
                    {{"converged", model.convergence.converged},
                     {"iterations", model.convergence.iterations},
                     {"final_change", model.convergence.final_change}}},
                   {"warnings", model.warnings}};
  if (model.family == ModelFamily::Forest) {
    auto trees = nlohmann::json::array();
    for (const auto& t : model.trees) {
      auto nodes = nlohmann::json::array();
      for (const auto& nd : t.nodes) nodes.push_back({nd.feature, nd.threshold, nd.left, nd.right, nd.value});
      trees.push_back(nodes);
    }
    j["n_trees"] = model.trees.size();
    j["trees"] = trees;
  } else {
    j["coefficients"] = std::vector<double>(model.coef.data(), model.coef.data() + model.coef.size());
    j["dropped_columns"] = model.dropped_columns;
  }
  if (model.family == ModelFamily::Logistic) j["separation"] = model.separation;
  return j;
}

}  // namespace trialbridge
