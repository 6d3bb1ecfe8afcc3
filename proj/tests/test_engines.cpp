#include <doctest.h>

#include <cmath>
#include <random>

#include "trialbridge/engines.hpp"
#include "trialbridge/error.hpp"
#include "trialbridge/rng.hpp"
#include "trialbridge/stats.hpp"

using namespace trialbridge;

namespace {

DesignMatrix random_design(int n, int p, Rng& rng) {
  std::normal_distribution<double> nd;
  DesignMatrix X;
  X.values.resize(n, p);
  for (int i = 0; i < n; ++i) {
    X.values(i, 0) = 1.0;
    for (int k = 1; k < p; ++k) X.values(i, k) = nd(rng);
  }
  for (int k = 0; k < p; ++k) X.labels.push_back("c" + std::to_string(k));
  return X;
}

StudyTable small_table() {
  const Schema schema = parse_schema(nlohmann::json::parse(R"([
    {"name": "a", "kind": "continuous"},
    {"name": "g", "kind": "categorical", "levels": ["p", "q", "r"]},
    {"name": "b", "kind": "binary", "levels": ["0", "1"]}
  ])")).trial;
  return parse_study("unit_id,a,g,b,t,y\nu1,1.5,p,0,1,1\nu2,2,q,1,0,0\nu3,-1,r,1,1,2\n", schema, Side::Trial);
}

}  // namespace

TEST_CASE("design uses reference coding and an intercept") {
  const auto X = build_design(small_table(), {"a", "g"});
  CHECK(X.cols() == 4);
  CHECK(X.labels[0] == kInterceptLabel);
  CHECK(X.values(1, 2) == 1.0);
  CHECK(X.values(2, 3) == 1.0);
  CHECK(X.values(0, 2) == 0.0);
}

TEST_CASE("empty covariate list gives an intercept-only design") {
  const auto X = build_design(small_table(), {});
  CHECK(X.cols() == 1);
  CHECK(X.rows() == 3);
}

TEST_CASE("saturated design adds cross products") {
  const auto X = build_design(small_table(), {"g", "b"}, true);
  // 1 + 2 (g) + 1 (b) + 2 (g x b)
  CHECK(X.cols() == 6);
}

TEST_CASE("design rejects missing cells") {
  auto t = small_table();
  t.x[0][1] = kMissing;
  CHECK_THROWS_AS(build_design(t, {"a"}), Error);
}

TEST_CASE("weighted least squares recovers exact coefficients") {
  Rng rng(3);
  const auto X = random_design(50, 3, rng);
  Eigen::Vector3d beta(1.0, -2.0, 0.5);
  std::vector<double> y(50), w(50);
  for (int i = 0; i < 50; ++i) {
    y[i] = X.values.row(i).dot(beta);
    w[i] = 1.0 + i % 3;
  }
  const auto fit = fit_linear(X, y, w);
  CHECK((fit.coef - beta).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(fit.sigma2 < 1e-20);
}

TEST_CASE("collinear column gets a zero coefficient and a warning") {
  Rng rng(5);
  auto X = random_design(40, 3, rng);
  X.values.conservativeResize(40, 4);
  X.values.col(3) = 2.0 * X.values.col(1);
  X.labels.push_back("dup");
  std::vector<double> y(40);
  for (int i = 0; i < 40; ++i) y[i] = X.values(i, 1) + 0.1 * i;
  const auto fit = fit_linear(X, y);
  CHECK(fit.dropped_columns.size() == 1);
  CHECK(!fit.warnings.empty());
}

TEST_CASE("logistic regression converges and the trace never decreases") {
  Rng rng(11);
  const auto X = random_design(300, 3, rng);
  std::vector<double> y(300);
  for (int i = 0; i < 300; ++i) {
    y[i] = uniform01(rng) < stats::expit(0.3 + X.values(i, 1) - 0.5 * X.values(i, 2)) ? 1.0 : 0.0;
  }
  const auto fit = fit_logistic(X, y);
  CHECK(fit.convergence.converged);
  CHECK(!fit.separation);
  for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k) CHECK(fit.loglik_trace[k] >= fit.loglik_trace[k - 1] - 1e-9);
  CHECK(fit.coef(1) == doctest::Approx(1.0).epsilon(0.5));
}

TEST_CASE("score equations hold at the logistic estimate") {
  Rng rng(17);
  const auto X = random_design(200, 2, rng);
  std::vector<double> y(200);
  for (int i = 0; i < 200; ++i) y[i] = uniform01(rng) < stats::expit(X.values(i, 1)) ? 1.0 : 0.0;
  const auto fit = fit_logistic(X, y);
  const auto p = predict(fit, X);
  Eigen::Vector2d score = Eigen::Vector2d::Zero();
  for (int i = 0; i < 200; ++i) score += X.values.row(i).transpose() * (y[i] - p[i]);
  CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("complete separation is detected") {
  DesignMatrix X;
  X.values.resize(20, 2);
  std::vector<double> y(20);
  for (int i = 0; i < 20; ++i) {
    X.values(i, 0) = 1.0;
    X.values(i, 1) = i - 9.5;
    y[i] = i >= 10 ? 1.0 : 0.0;
  }
  X.labels = {"(Intercept)", "x"};
  const auto fit = fit_logistic(X, y);
  CHECK(fit.separation);
  CHECK(!fit.warnings.empty());
}

TEST_CASE("forest is deterministic for a seed and separates classes") {
  Rng rng(23);
  const auto X = random_design(300, 3, rng);
  std::vector<double> y(300);
  for (int i = 0; i < 300; ++i) y[i] = X.values(i, 1) > 0.0 ? 1.0 : 0.0;
  ForestParams params;
  params.n_trees = 50;
  params.seed = 9;
  const auto a = predict(fit_forest(X, y, params), X);
  const auto b = predict(fit_forest(X, y, params), X);
  CHECK(a == b);
  int correct = 0;
  for (int i = 0; i < 300; ++i) correct += (a[i] > 0.5) == (y[i] == 1.0);
  CHECK(correct > 270);
  for (double v : a) CHECK((v >= 0.0 && v <= 1.0));
}
