#include <doctest.h>

#include <cmath>

#include "trialbridge/pipeline.hpp"
#include "trialbridge/stats.hpp"
#include "trialbridge/weighting.hpp"

using namespace trialbridge;

namespace {

StudyTable reference_stack(std::uint64_t seed, std::size_t n_trial = 500, std::size_t n_target = 5000) {
  const auto d = generate_synthetic(reference_dgp(n_trial, n_target), seed);
  return stack(d.trial, d.target);
}

}  // namespace

TEST_CASE("weights follow the scenario formula") {
  const auto stacked = reference_stack(1);
  PsModelSpec spec;
  spec.covariates = {"x1", "x2", "x3"};
  for (auto scenario : {Scenario::Generalizability, Scenario::Transportability}) {
    const auto fit = estimate_sampling_score(stacked, spec, scenario);
    const auto w = make_weights(fit);
    for (std::size_t i = 0; i < stacked.size(); ++i) {
      if (stacked.s[i] == 0) {
        CHECK(w.w[i] == 0.0);
      } else if (scenario == Scenario::Generalizability) {
        CHECK(w.w[i] == doctest::Approx(1.0 / fit.ps[i]));
      } else {
        CHECK(w.w[i] == doctest::Approx((1.0 - fit.ps[i]) / fit.ps[i]));
      }
    }
  }
}

TEST_CASE("fitted sampling score recovers the selection slopes") {
  const auto stacked = reference_stack(2, 2000, 20000);
  PsModelSpec spec;
  spec.covariates = {"x1", "x2", "x3"};
  const auto fit = estimate_sampling_score(stacked, spec, Scenario::Transportability);
  CHECK(fit.model.coef(1) == doctest::Approx(-0.5).epsilon(0.15));
  CHECK(fit.model.coef(2) == doctest::Approx(0.5).epsilon(0.15));
  CHECK(fit.model.coef(3) == doctest::Approx(0.5).epsilon(0.3));
}

TEST_CASE("normalization gives mean one over trial units") {
  const auto stacked = reference_stack(3);
  PsModelSpec spec;
  spec.covariates = {"x1", "x2"};
  const auto w = trim_stabilize(make_weights(estimate_sampling_score(stacked, spec, Scenario::Transportability)),
                                WeightPolicy::standard());
  CHECK(stats::mean(w.trial_weights()) == doctest::Approx(1.0));
  CHECK(w.normalized);
  CHECK(w.effective_sample_size() <= static_cast<double>(w.n_trial()));
}

TEST_CASE("percentile caps bound the weights") {
  const auto stacked = reference_stack(4);
  PsModelSpec spec;
  spec.covariates = {"x1", "x2", "x3"};
  const auto raw = make_weights(estimate_sampling_score(stacked, spec, Scenario::Transportability));
  const auto tw = raw.trial_weights();
  const double lo = stats::nearest_rank(tw, 5), hi = stats::nearest_rank(tw, 95);
  const auto capped = trim_stabilize(raw, WeightPolicy{{TrimCap{5, 95}}});
  for (double v : capped.trial_weights()) CHECK((v >= lo && v <= hi));
  REQUIRE(capped.history.size() == 1);
  CHECK(capped.history[0].affected > 0);
}

TEST_CASE("clamping is counted for extreme external scores") {
  const auto stacked = reference_stack(5, 100, 200);
  std::vector<double> ps(stacked.size(), 0.5);
  ps[0] = 0.0;
  ps[1] = 1.0;
  const auto fit = propensity_from_scores(stacked, ps, Scenario::Transportability);
  CHECK(fit.clamped_low == 1);
  CHECK(fit.clamped_high == 1);
  CHECK(fit.ps[0] == kPsLowerClamp);
}

TEST_CASE("positivity audit flags target modifier values outside the trial range") {
  auto d = generate_synthetic(reference_dgp(200, 500), 6);
  const std::size_t j = d.target.index_of("x1");
  d.target.x[j][0] = 1e3;
  const auto stacked = stack(d.trial, d.target);
  PsModelSpec spec;
  spec.covariates = {"x2"};
  const auto audit =
      positivity_audit(estimate_sampling_score(stacked, spec, Scenario::Transportability), stacked, {"x1"});
  REQUIRE(audit.modifiers.size() == 1);
  CHECK(audit.modifiers[0].violation);
  CHECK(audit.modifiers[0].violating_units >= 1);
}

TEST_CASE("weights CSV has one row per trial unit") {
  const auto stacked = reference_stack(7, 50, 100);
  PsModelSpec spec;
  spec.covariates = {"x1"};
  const auto w = make_weights(estimate_sampling_score(stacked, spec, Scenario::Transportability));
  const auto csv = weights_csv(w);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == 51);
}
