#include <doctest.h>

#include <cmath>

#include "trialbridge/error.hpp"
#include "trialbridge/verdict.hpp"

using namespace trialbridge;

namespace {

EffectEstimate pub(Estimand e, double p, double lo, double hi, std::optional<double> sd = std::nullopt) {
  return published_estimate(e, p, lo, hi, sd);
}

}  // namespace

TEST_CASE("published estimate recovers the SD from the interval") {
  const auto e = pub(Estimand::PATE, 1.0, -0.96, 2.96);
  CHECK(e.se == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(e.variance.kind == VarianceKind::Carried);
}

TEST_CASE("significant with opposite signs disagrees on regulatory grounds") {
  const auto t = pub(Estimand::TATE, 2.0, 1.0, 3.0);
  const auto p = pub(Estimand::PATE, -2.0, -3.0, -1.0);
  CHECK(!regulatory_agreement(t, p));
}

TEST_CASE("both non-significant agrees on regulatory grounds") {
  const auto t = pub(Estimand::TATE, 0.5, -1.0, 2.0);
  const auto p = pub(Estimand::PATE, 3.0, -1.0, 7.0);
  CHECK(regulatory_agreement(t, p));
  CHECK(!estimate_agreement(t, p));
}

TEST_CASE("one significant and one not disagrees") {
  const auto t = pub(Estimand::TATE, -2.52, -4.26, -0.79, 0.89);
  const auto p = pub(Estimand::PATE, -3.02, -6.98, 0.94, 2.02);
  const auto v = compare_effects(t, p);
  CHECK(!v.regulatory);
  CHECK(v.estimate);
  CHECK(v.standardized_difference.value == doctest::Approx(-0.23).epsilon(0.05));
}

TEST_CASE("estimate agreement uses a closed interval") {
  const auto t = pub(Estimand::TATE, 1.0, 0.0, 2.0);
  CHECK(estimate_agreement(t, pub(Estimand::PATE, 2.0, 1.0, 3.0)));
  CHECK(!estimate_agreement(t, pub(Estimand::PATE, 2.0001, 1.0, 3.0)));
}

TEST_CASE("standardized difference formula") {
  const auto t = pub(Estimand::TATE, 1.0, 0.0, 2.0, 3.0);
  const auto p = pub(Estimand::PATE, 6.0, 0.0, 2.0, 4.0);
  CHECK(standardized_difference(t, p).value == doctest::Approx(1.0));
  const auto z = pub(Estimand::PATE, 6.0, 6.0, 6.0, 0.0);
  const auto tz = pub(Estimand::TATE, 1.0, 1.0, 1.0, 0.0);
  CHECK(!standardized_difference(tz, z).defined);
}

TEST_CASE("design agreement by direction") {
  const auto p = pub(Estimand::PATE, 2.0, 1.0, 3.0);
  CHECK(design_agreement(p, {Direction::Increase, 1.5}));
  CHECK(!design_agreement(p, {Direction::Increase, 2.5}));
  CHECK(!design_agreement(p, {Direction::Decrease, 1.0}));
  CHECK(design_agreement(pub(Estimand::PATE, -2.0, -3.0, -1.0), {Direction::Decrease, 1.0}));
  CHECK_THROWS_AS(design_agreement(p, {Direction::Increase, -1.0}), Error);
}

TEST_CASE("confidence level mismatch is an error") {
  const auto t = published_estimate(Estimand::TATE, 1.0, 0.0, 2.0, std::nullopt, 0.95);
  const auto p = published_estimate(Estimand::PATE, 1.0, 0.0, 2.0, std::nullopt, 0.90);
  CHECK_THROWS_AS(regulatory_agreement(t, p), Error);
}

TEST_CASE("unmeasured modifier shift is linear in the prevalence gap") {
  const auto p = pub(Estimand::PATE, 1.0, 0.0, 2.0);
  const auto a = adjust_unmeasured_modifier(p, 2.0, 0.3, 0.5);
  const auto b = adjust_unmeasured_modifier(p, 2.0, 0.3, 0.7);
  CHECK(a.point == doctest::Approx(1.4));
  CHECK(b.point - p.point == doctest::Approx(2.0 * (a.point - p.point)));
  CHECK(a.ci_hi - a.ci_lo == doctest::Approx(p.ci_hi - p.ci_lo));
  CHECK(a.se == p.se);
  CHECK(!a.flags.empty());
}

TEST_CASE("scenario runner records base first and per-row failures") {
  const auto base_t = pub(Estimand::TATE, 1.0, 0.0, 2.0);
  const auto base_p = pub(Estimand::PATE, 1.2, 0.1, 2.3);
  const ScenarioRunner runner = [&](const ScenarioSpec* s) -> ScenarioOutcome {
    if (s && std::holds_alternative<CompleteCaseToggle>(s->perturbation)) fail(ErrorKind::Estimation, "boom");
    return {base_t, base_p};
  };
  const std::vector<ScenarioSpec> specs{{"cc", CompleteCaseToggle{}},
                                        {"u", UnmeasuredModifier{1.0, 0.2, 0.6}},
                                        {"alt", AlternateEstimator{Method::Dr}}};
  const auto rows = run_scenarios(runner, specs);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].label == "base");
  CHECK(rows[1].error.find("boom") != std::string::npos);
  CHECK(rows[2].pate->point == doctest::Approx(1.6));
  CHECK(rows[3].verdict.has_value());
}

TEST_CASE("scenario specs round-trip through JSON") {
  const ScenarioSpec s{"trim", TrimmingPolicy{WeightPolicy{{TrimCap{1, 99}, Normalize{}}}}};
  const auto back = scenario_from_json(to_json(s));
  CHECK(back.label == "trim");
  CHECK(perturbation_name(back.perturbation) == "trimming");
  CHECK(std::get<TrimmingPolicy>(back.perturbation).policy.steps.size() == 2);
}
