#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "trialbridge/error.hpp"
#include "trialbridge/parallel.hpp"
#include "trialbridge/pipeline.hpp"

using namespace trialbridge;
namespace fs = std::filesystem;

namespace {

nlohmann::json minimal_config() {
  return {{"schema_version", 1},
          {"seed", 1},
          {"paths", {{"trial", "trial.csv"}, {"target", "target.csv"}, {"schema", "schema.json"}, {"output_dir", "out"}}},
          {"estimators", {{{"method", "ipsw"}, {"variance", "sandwich"}}}}};
}

bool mentions(const std::vector<std::string>& errors, const std::string& needle) {
  for (const auto& e : errors) {
    if (e.find(needle) != std::string::npos) return true;
  }
  return false;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("trialbridge_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_dataset(const fs::path& dir, const DgpSpec& dgp, std::uint64_t seed) {
  const auto d = generate_synthetic(dgp, seed);
  save_study(d.trial, dir / "trial.csv");
  save_study(d.target, dir / "target.csv");
  std::ofstream(dir / "schema.json") << schema_to_json(dgp.schema()).dump(2);
}

}  // namespace

TEST_CASE("minimal config validates") {
  CHECK(validate_config(minimal_config()).empty());
}

TEST_CASE("missing seed is reported") {
  auto j = minimal_config();
  j.erase("seed");
  CHECK(mentions(validate_config(j), "seed"));
}

TEST_CASE("two missing-data strategies are reported") {
  auto j = minimal_config();
  j["missing_data"] = {{"psi_within", nlohmann::json::object()}, {"complete_case", nlohmann::json::object()}};
  CHECK(!validate_config(j).empty());
}

TEST_CASE("sandwich variance with g-computation is reported") {
  auto j = minimal_config();
  j["estimators"] = {{{"method", "gcomp"}, {"variance", "sandwich"}}};
  CHECK(mentions(validate_config(j), "sandwich"));
}

TEST_CASE("all violations are collected") {
  auto j = minimal_config();
  j.erase("seed");
  j["bootstrap"] = {{"replicates", 10}};
  j["scenario"] = "elsewhere";
  CHECK(validate_config(j).size() >= 3);
  CHECK_THROWS_AS(parse_config(j), Error);
}

TEST_CASE("canonical JSON is stable and rounds floats") {
  const nlohmann::json j = {{"b", 1.23456789}, {"a", {-0.0, std::nan(""), 2}}};
  const auto s = canonical_dump(j);
  CHECK(s.find("1.23457") != std::string::npos);
  CHECK(s.find("null") != std::string::npos);
  CHECK(s.find("\"a\"") < s.find("\"b\""));
  CHECK(canonical_dump(nlohmann::json::parse(s)) == s);
}

TEST_CASE("simulated data and a json-only run produce one file") {
  const auto dir = scratch("json_only");
  write_dataset(dir, reference_dgp(300, 1500), 3);
  auto j = minimal_config();
  j["formats"] = {"json"};
  const auto cfg = parse_config(j, dir);
  const auto report = run(cfg);
  const auto written = emit_report(report, cfg.formats, cfg.output_dir);
  REQUIRE(written.size() == 1);
  CHECK(written[0].filename() == "report.json");
  CHECK(report.body.at("schema") == kReportSchemaTag);
  CHECK(report.body.at("estimates").size() == 2);
  CHECK(report.body.at("estimates")[0].at("estimand") == "TATE");
  CHECK(!report.body.contains("timing"));
  fs::remove_all(dir);
}

TEST_CASE("missing data file is an io error") {
  const auto dir = scratch("missing_file");
  const auto cfg = parse_config(minimal_config(), dir);
  try {
    run(cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
  fs::remove_all(dir);
}

TEST_CASE("low overlap produces a not-generalizable caveat") {
  const auto dir = scratch("low_overlap");
  DgpSpec dgp = reference_dgp(300, 3000);
  dgp.covariates[0].selection = -4.0;
  write_dataset(dir, dgp, 4);
  auto j = minimal_config();
  j["formats"] = {"json"};
  const auto report = run(parse_config(j, dir));
  bool found = false;
  for (const auto& c : report.body.at("caveats")) found = found || c.get<std::string>().rfind("NOT GENERALIZABLE", 0) == 0;
  CHECK(found);
  fs::remove_all(dir);
}

TEST_CASE("demo configuration runs end to end") {
  const auto out = scratch("demo");
  auto cfg = load_config(fs::path(TRIALBRIDGE_DEMO_DIR) / "config.json");
  cfg.output_dir = out;
  set_thread_count(1);
  const auto report = run(cfg);
  const auto written = emit_report(report, cfg.formats, cfg.output_dir);
  CHECK(written.size() == 5);
  CHECK(report.body.at("verdict").size() == 3);
  CHECK(report.body.at("sensitivity").size() == 6);
  CHECK(report.body.at("pooled").size() == 3);
  const auto md = render_markdown(report.body);
  CHECK(md.find("Step 8") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("synthetic truth and selection intercept") {
  const auto dgp = reference_dgp(1000, 10000);
  CHECK(dgp.true_pate() == doctest::Approx(1.5));
  const auto d = generate_synthetic(dgp, 5);
  CHECK(d.trial.size() == 1000);
  CHECK(d.target.size() == 10000);
  CHECK(d.true_pate == doctest::Approx(1.5));
  CHECK(std::isfinite(dgp.stacked_selection_intercept()));
}
