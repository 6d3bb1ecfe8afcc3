#include <doctest.h>

#include <cmath>
#include <cstring>

#include "trialbridge/error.hpp"
#include "trialbridge/imputation.hpp"
#include "trialbridge/parallel.hpp"
#include "trialbridge/pipeline.hpp"

using namespace trialbridge;

namespace {

StudyTable masked_stack(std::uint64_t seed, double rate = 0.2) {
  DgpSpec dgp = reference_dgp(300, 1500);
  dgp.missingness.kind = MissingKind::Mcar;
  dgp.missingness.variables = {"x2", "x3"};
  dgp.missingness.rate = rate;
  const auto d = generate_synthetic(dgp, seed);
  return stack(d.trial, d.target);
}

}  // namespace

TEST_CASE("rubin pooling formulas") {
  const auto p = rubin_pool({1.0, 2.0, 3.0}, {0.5, 0.5, 0.5});
  CHECK(p.point == doctest::Approx(2.0));
  CHECK(p.within == doctest::Approx(0.5));
  CHECK(p.between == doctest::Approx(1.0));
  CHECK(p.total == doctest::Approx(0.5 + (4.0 / 3.0)));
  const double r = (4.0 / 3.0) / 0.5;
  CHECK(p.df == doctest::Approx(2.0 * std::pow(1.0 + 1.0 / r, 2)));
  CHECK(p.ci_lo < 2.0);
}

TEST_CASE("rubin pooling with no between variance uses the normal interval") {
  const auto p = rubin_pool({1.0, 1.0}, {0.04, 0.04});
  CHECK(std::isinf(p.df));
  CHECK(p.ci_hi - p.point == doctest::Approx(1.959964 * 0.2).epsilon(1e-5));
}

TEST_CASE("mice fills every cell and leaves observed cells untouched") {
  const auto stacked = masked_stack(1);
  MiceConfig cfg;
  cfg.m = 3;
  cfg.iterations = 3;
  cfg.seed = 5;
  const auto imps = mice(stacked, cfg);
  REQUIRE(imps.completed.size() == 3);
  CHECK(imps.order.size() == 2);
  for (const auto& t : imps.completed) {
    CHECK(!t.has_missing());
    for (std::size_t j = 0; j < stacked.x.size(); ++j) {
      for (std::size_t i = 0; i < stacked.size(); ++i) {
        const double o = stacked.x[j][i];
        if (!is_missing(o)) CHECK(std::memcmp(&o, &t.x[j][i], sizeof o) == 0);
      }
    }
    const auto& x3 = t.column("x3");
    for (double v : x3) CHECK((v == 0.0 || v == 1.0));
  }
  CHECK(imps.chain_means.at("x2").size() == 3);
  CHECK(imps.chain_means.at("x2")[0].size() == 4);
}

TEST_CASE("mice is independent of the thread count") {
  const auto stacked = masked_stack(2);
  MiceConfig cfg;
  cfg.m = 3;
  cfg.iterations = 2;
  cfg.seed = 9;
  set_thread_count(1);
  const auto a = mice(stacked, cfg);
  set_thread_count(3);
  const auto b = mice(stacked, cfg);
  set_thread_count(1);
  for (std::size_t k = 0; k < 3; ++k) CHECK(a.completed[k].x == b.completed[k].x);
}

TEST_CASE("imputation refuses a variable with too few observed cells") {
  auto stacked = masked_stack(3);
  auto& x2 = stacked.x[stacked.index_of("x2")];
  for (std::size_t i = 5; i < x2.size(); ++i) x2[i] = kMissing;
  MiceConfig cfg;
  cfg.m = 2;
  CHECK_THROWS_AS(mice(stacked, cfg), Error);
}

TEST_CASE("psi-within pools one analysis per table") {
  const auto stacked = masked_stack(4);
  MiceConfig cfg;
  cfg.m = 4;
  cfg.iterations = 3;
  cfg.seed = 1;
  const auto imps = mice(stacked, cfg);
  AnalysisSpec spec;
  spec.ps.covariates = {"x1", "x2", "x3"};
  const auto pooled = psi_within(imps, spec, 2);
  CHECK(pooled.m == 4);
  CHECK(pooled.points.size() == 4);
  CHECK(pooled.total >= pooled.within);
  CHECK(pooled.point == doctest::Approx(1.5).epsilon(0.4));
}

TEST_CASE("psi-across averages scores and flags it") {
  const auto stacked = masked_stack(5);
  MiceConfig cfg;
  cfg.m = 3;
  cfg.iterations = 2;
  cfg.seed = 3;
  AnalysisSpec spec;
  spec.ps.covariates = {"x1", "x2", "x3"};
  const auto e = psi_across(mice(stacked, cfg), spec, 4);
  CHECK(std::isfinite(e.point));
  CHECK(!e.flags.empty());
}

TEST_CASE("complete cases drop incomplete rows") {
  const auto stacked = masked_stack(6);
  const auto cc = complete_cases(stacked);
  CHECK(!cc.has_missing());
  CHECK(cc.size() < stacked.size());
}
