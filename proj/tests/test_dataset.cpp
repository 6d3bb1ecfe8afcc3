#include <doctest.h>

#include "trialbridge/dataset.hpp"
#include "trialbridge/error.hpp"

using namespace trialbridge;

namespace {

Schema basic_schema() {
  return parse_schema(nlohmann::json::parse(R"([
    {"name": "age", "kind": "continuous", "roles": ["ps_model", "outcome_model", "effect_modifier"]},
    {"name": "sex", "kind": "binary", "levels": ["F", "M"], "recode_map": {"female": "F", "male": "M"}},
    {"name": "site", "kind": "categorical", "levels": ["a", "b", "c"]}
  ])")).trial;
}

const char* kTrialCsv =
    "unit_id,age,sex,site,t,y\n"
    "u1,30,F,a,1,2.5\n"
    "u2,41.5,male,b,0,1.0\n"
    "u3,NA,M,c,1,3.0\n"
    "u4,55,F,,0,0.5\n";

const char* kTargetCsv =
    "unit_id,age,sex,site\n"
    "p1,60,F,a\n"
    "p2,35,M,c\n";

}  // namespace

TEST_CASE("schema parsing assigns roles and levels") {
  const Schema s = basic_schema();
  REQUIRE(s.size() == 3);
  CHECK(s[0].is_effect_modifier_candidate);
  CHECK(s[1].kind == CovariateKind::Binary);
  CHECK(s[1].levels == std::vector<std::string>{"F", "M"});
  CHECK(s[2].levels.size() == 3);
}

TEST_CASE("schema rejects a binary covariate with three levels") {
  const auto j = nlohmann::json::parse(R"([{"name": "b", "kind": "binary", "levels": ["x", "y", "z"]}])");
  CHECK_THROWS_AS(parse_schema(j), Error);
}

TEST_CASE("schema rejects duplicate names") {
  const auto j = nlohmann::json::parse(R"([{"name": "a", "kind": "continuous"}, {"name": "a", "kind": "continuous"}])");
  CHECK_THROWS_AS(parse_schema(j), Error);
}

TEST_CASE("trial CSV parses covariates, recodes and missing cells") {
  const StudyTable t = parse_study(kTrialCsv, basic_schema(), Side::Trial);
  REQUIRE(t.size() == 4);
  CHECK(t.n_trial() == 4);
  CHECK(t.column("age")[1] == doctest::Approx(41.5));
  CHECK(t.column("sex")[1] == 1.0);
  CHECK(is_missing(t.column("age")[2]));
  CHECK(is_missing(t.column("site")[3]));
  CHECK(t.has_missing());
  CHECK(t.t == std::vector<double>{1, 0, 1, 0});
}

TEST_CASE("unknown categorical level is a parse error") {
  const std::string csv = "unit_id,age,sex,site,t,y\nu1,30,F,z,1,2\n";
  CHECK_THROWS_AS(parse_study(csv, basic_schema(), Side::Trial), Error);
}

TEST_CASE("target CSV must not carry treatment or outcome") {
  const std::string csv = "unit_id,age,sex,site,t,y\np1,30,F,a,1,2\n";
  CHECK_THROWS_AS(parse_study(csv, basic_schema(), Side::Target), Error);
}

TEST_CASE("trial rows without outcome are excluded and counted") {
  const std::string csv = "unit_id,age,sex,site,t,y\nu1,30,F,a,1,NA\nu2,31,F,a,0,1\n";
  const StudyTable t = parse_study(csv, basic_schema(), Side::Trial);
  CHECK(t.size() == 1);
  CHECK(t.provenance.excluded_missing_outcome == 1);
}

TEST_CASE("format and parse round-trip exactly") {
  const StudyTable t = parse_study(kTrialCsv, basic_schema(), Side::Trial);
  const StudyTable back = parse_study(format_study(t), basic_schema(), Side::Trial);
  CHECK(back.x.size() == t.x.size());
  for (std::size_t j = 0; j < t.x.size(); ++j) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double a = t.x[j][i], b = back.x[j][i];
      CHECK(((is_missing(a) && is_missing(b)) || a == b));
    }
  }
  CHECK(back.y == t.y);
  CHECK(back.unit_ids == t.unit_ids);
}

TEST_CASE("harmonize drops one-sided covariates") {
  auto pair = parse_schema(nlohmann::json::parse(R"({
    "trial": [{"name": "age", "kind": "continuous"}, {"name": "dose", "kind": "continuous"}],
    "target": [{"name": "age", "kind": "continuous"}, {"name": "zip", "kind": "continuous"}]
  })"));
  const auto trial = parse_study("unit_id,age,dose,t,y\nu1,1,2,1,0\n", pair.trial, Side::Trial);
  const auto target = parse_study("unit_id,age,zip\np1,3,4\n", pair.target, Side::Target);
  const auto h = harmonize(trial, target);
  CHECK(h.trial.schema.size() == 1);
  CHECK(h.target.schema.size() == 1);
  CHECK(h.dropped == std::vector<std::string>{"dose", "zip"});
  CHECK(!h.warnings.empty());
}

TEST_CASE("harmonize rejects kind mismatches") {
  auto pair = parse_schema(nlohmann::json::parse(R"({
    "trial": [{"name": "a", "kind": "continuous"}],
    "target": [{"name": "a", "kind": "binary", "levels": ["0", "1"]}]
  })"));
  const auto trial = parse_study("unit_id,a,t,y\nu1,1,1,0\n", pair.trial, Side::Trial);
  const auto target = parse_study("unit_id,a\np1,1\n", pair.target, Side::Target);
  CHECK_THROWS_AS(harmonize(trial, target), Error);
}

TEST_CASE("stack prefixes ids and sets membership") {
  const auto trial = parse_study(kTrialCsv, basic_schema(), Side::Trial);
  const auto target = parse_study(kTargetCsv, basic_schema(), Side::Target);
  const auto s = stack(trial, target);
  CHECK(s.size() == 6);
  CHECK(s.n_trial() == 4);
  CHECK(s.n_target() == 2);
  CHECK(s.unit_ids.front() == "trial:u1");
  CHECK(s.unit_ids.back() == "target:p2");
  CHECK(is_missing(s.y.back()));
  CHECK(s.side(Side::Target).size() == 2);
}

TEST_CASE("missingness profile counts per side") {
  const auto s = stack(parse_study(kTrialCsv, basic_schema(), Side::Trial),
                       parse_study(kTargetCsv, basic_schema(), Side::Target));
  const auto m = missingness_profile(s);
  REQUIRE(m.variables.size() == 3);
  CHECK(m.fraction_trial[0] == doctest::Approx(0.25));
  CHECK(m.fraction_target[0] == doctest::Approx(0.0));
  CHECK(m.any_missing_trial == doctest::Approx(0.5));
  CHECK(m.n == 6);
}

TEST_CASE("subset and select") {
  const auto t = parse_study(kTrialCsv, basic_schema(), Side::Trial);
  const auto sub = t.subset({1, 1, 0});
  CHECK(sub.unit_ids == std::vector<std::string>{"u2", "u2", "u1"});
  const auto sel = t.select({"site", "age"});
  CHECK(sel.schema[0].name == "site");
  CHECK(sel.column("age")[0] == 30.0);
  CHECK_THROWS_AS(t.select({"nope"}), Error);
}
