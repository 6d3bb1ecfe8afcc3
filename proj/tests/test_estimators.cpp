#include <doctest.h>

#include <cmath>

#include "trialbridge/error.hpp"
#include "trialbridge/estimators.hpp"
#include "trialbridge/parallel.hpp"
#include "trialbridge/pipeline.hpp"
#include "trialbridge/stats.hpp"

using namespace trialbridge;

namespace {

StudyTable reference_stack(std::uint64_t seed, std::size_t n_trial = 1000, std::size_t n_target = 10000) {
  const auto d = generate_synthetic(reference_dgp(n_trial, n_target), seed);
  return stack(d.trial, d.target);
}

AnalysisSpec full_spec(Method m) {
  AnalysisSpec spec;
  spec.ps.covariates = {"x1", "x2", "x3"};
  spec.outcome.covariates = {"x1", "x2", "x3"};
  spec.method = m;
  return spec;
}

}  // namespace

TEST_CASE("reference design has true PATE 1.5") {
  CHECK(reference_dgp().true_pate() == doctest::Approx(1.5));
}

TEST_CASE("TATE is the difference in arm means with the Neyman SE") {
  const auto stacked = reference_stack(1, 400, 10);
  const auto trial = stacked.side(Side::Trial);
  std::vector<double> y1, y0;
  for (std::size_t i = 0; i < trial.size(); ++i) (trial.t[i] == 1.0 ? y1 : y0).push_back(trial.y[i]);
  const auto e = tate(stacked);
  CHECK(e.point == doctest::Approx(stats::mean(y1) - stats::mean(y0)));
  CHECK(e.se == doctest::Approx(std::sqrt(stats::variance(y1) / y1.size() + stats::variance(y0) / y0.size())));
  CHECK(e.ci_lo < e.point);
  CHECK(e.estimand == Estimand::TATE);
}

TEST_CASE("TATE needs both arms") {
  auto stacked = reference_stack(2, 100, 10);
  for (auto& t : stacked.t) {
    if (!is_missing(t)) t = 1.0;
  }
  CHECK_THROWS_AS(tate(stacked), Error);
}

TEST_CASE("the three PATE estimators land near the truth") {
  const auto stacked = reference_stack(3, 2000, 20000);
  for (auto m : {Method::Ipsw, Method::Gcomp, Method::Dr}) {
    const double p = analysis_point(stacked, full_spec(m), 0);
    CHECK(p == doctest::Approx(1.5).epsilon(0.15));
  }
}

TEST_CASE("IPSW with unit weights equals the trial difference in means") {
  const auto stacked = reference_stack(4, 300, 300);
  const auto fit = propensity_from_scores(stacked, std::vector<double>(stacked.size(), 0.5), Scenario::Transportability);
  const auto w = make_weights(fit);
  CHECK(ipsw_pate(stacked, w).point == doctest::Approx(tate(stacked).point));
}

TEST_CASE("sandwich interval is symmetric around the point") {
  auto spec = full_spec(Method::Ipsw);
  const auto e = analyze(reference_stack(5, 500, 5000), spec, 1);
  CHECK(e.variance.kind == VarianceKind::Sandwich);
  CHECK(e.point - e.ci_lo == doctest::Approx(e.ci_hi - e.point));
  CHECK(e.se > 0.0);
}

TEST_CASE("bootstrap is reproducible and independent of the thread count") {
  const auto stacked = reference_stack(6, 300, 3000);
  auto spec = full_spec(Method::Dr);
  spec.variance = VarianceKind::Bootstrap;
  spec.bootstrap_replicates = 60;
  set_thread_count(1);
  const auto a = analyze(stacked, spec, 42);
  set_thread_count(4);
  const auto b = analyze(stacked, spec, 42);
  set_thread_count(1);
  CHECK(a.ci_lo == b.ci_lo);
  CHECK(a.ci_hi == b.ci_hi);
  CHECK(a.se == b.se);
  CHECK(a.variance.replicates == 60);
}

TEST_CASE("bootstrap rejects too few replicates and too many failures") {
  const auto stacked = reference_stack(7, 100, 100);
  const Procedure ok = [](const StudyTable& t, std::uint64_t) { return tate(t).point; };
  CHECK_THROWS_AS(bootstrap_ci(stacked, ok, 10, 1, BootFlavor::Percentile), Error);
  int calls = 0;
  const Procedure flaky = [&](const StudyTable&, std::uint64_t) -> double {
    ++calls;
    fail(ErrorKind::Model, "always fails");
  };
  set_thread_count(1);
  CHECK_THROWS_AS(bootstrap_ci(stacked, flaky, 50, 1, BootFlavor::Percentile), Error);
}

TEST_CASE("stratified resample keeps side sizes") {
  const auto stacked = reference_stack(8, 120, 80);
  Rng rng(1);
  const auto r = bootstrap_resample(stacked, rng);
  CHECK(r.n_trial() == 120);
  CHECK(r.n_target() == 80);
}

TEST_CASE("sandwich variance is refused for g-computation") {
  auto spec = full_spec(Method::Gcomp);
  spec.variance = VarianceKind::Sandwich;
  CHECK_THROWS_AS(analyze(reference_stack(9, 200, 200), spec, 1), Error);
}

TEST_CASE("binary outcomes use logistic outcome models") {
  auto stacked = reference_stack(10, 800, 2000);
  for (auto& y : stacked.y) {
    if (!is_missing(y)) y = y > 1.0 ? 1.0 : 0.0;
  }
  OutcomeSpec out;
  out.type = OutcomeType::Binary;
  out.covariates = {"x1", "x2", "x3"};
  const double p = gcomp_pate(stacked, out).point;
  CHECK(p > -1.0);
  CHECK(p < 1.0);
}

TEST_CASE("subgroups by level and by quantile bins") {
  const auto stacked = reference_stack(11, 400, 10);
  const auto by_level = subgroup_effects(stacked, "x3");
  CHECK(by_level.bins.size() == 2);
  const auto by_bin = subgroup_effects(stacked, "x1", 4);
  CHECK(by_bin.bins.size() == 4);
  std::size_t n = 0;
  for (const auto& b : by_bin.bins) n += b.n;
  CHECK(n == 400);
  CHECK(by_bin.bins[0].label.front() == '[');
}

TEST_CASE("effect estimate JSON round-trips") {
  const auto e = analyze(reference_stack(12, 200, 500), full_spec(Method::Ipsw), 3);
  const auto back = effect_from_json(to_json(e));
  CHECK(back.point == e.point);
  CHECK(back.ci_lo == e.ci_lo);
  CHECK(back.method == e.method);
  CHECK(back.variance.kind == e.variance.kind);
}
