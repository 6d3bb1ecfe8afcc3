#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "trialbridge/error.hpp"
#include "trialbridge/parallel.hpp"
#include "trialbridge/pipeline.hpp"

namespace tb = trialbridge;

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) tb::fail(tb::ErrorKind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    tb::fail(tb::ErrorKind::Config, path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) tb::fail(tb::ErrorKind::Io, "cannot write " + path.string());
  out << text;
  out.close();
  if (!out) tb::fail(tb::ErrorKind::Io, "write failed for " + path.string());
}

int cmd_run(const std::string& config_path, unsigned threads) {
  tb::set_thread_count(threads);
  const tb::PipelineConfig cfg = tb::load_config(config_path);
  const tb::RunReport report = tb::run(cfg);
  for (const auto& w : report.body.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
  for (const auto& c : report.body.at("caveats")) {
    const std::string s = c.get<std::string>();
    if (s.rfind("NOT GENERALIZABLE", 0) == 0) std::cerr << s << "\n";
  }
  for (const auto& [step, ms] : report.timing_ms) std::cerr << "timing: " << step << " " << ms << " ms\n";
  for (const auto& p : tb::emit_report(report, cfg.formats, cfg.output_dir)) std::cout << p.string() << "\n";
  return 0;
}

int cmd_simulate(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
  const tb::DgpSpec spec = tb::dgp_from_json(read_json(spec_path));
  const tb::SyntheticData data = tb::generate_synthetic(spec, seed);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) tb::fail(tb::ErrorKind::Io, "cannot create " + out_dir + ": " + ec.message());
  const std::filesystem::path dir(out_dir);
  tb::save_study(data.trial, dir / "trial.csv");
  tb::save_study(data.target, dir / "target.csv");
  write_text(dir / "schema.json", tb::schema_to_json(spec.schema()).dump(2) + "\n");
  nlohmann::json truth{{"seed", seed}, {"true_pate", data.true_pate}, {"spec", tb::to_json(spec)}};
  write_text(dir / "truth.json", truth.dump(2) + "\n");
  std::cout << "true PATE " << data.true_pate << "\n";
  return 0;
}

int cmd_check_balance(const std::string& config_path) {
  const tb::PipelineConfig cfg = tb::load_config(config_path);
  const nlohmann::json out = tb::check_balance(cfg);
  for (const auto& w : out.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
  std::cout << tb::similarity_markdown(out.at("similarity"));
  const auto& s = out.at("similarity");
  std::cout << "\nstandardized delta-p: " << s.at("standardized_delta_p") << "\n";
  std::cout << "tipton index: " << s.at("tipton_index") << " (" << s.at("tipton_category") << ")\n";
  return 0;
}

int cmd_validate(const std::string& config_path) {
  const auto errors = tb::validate_config_file(config_path);
  if (errors.empty()) {
    std::cout << "ok\n";
    return 0;
  }
  for (const auto& e : errors) std::cerr << e << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Translate a randomized trial's effect estimate to a target population"};
  app.require_subcommand(1);

  std::string config, spec, out;
  unsigned threads = 1;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "Run the full analysis and write the report");
  run->add_option("--config", config, "Config JSON")->required();
  run->add_option("--threads", threads, "Worker threads")->check(CLI::Range(1u, 1024u));

  auto* sim = app.add_subcommand("simulate", "Generate synthetic trial and target data");
  sim->add_option("--spec", spec, "Data-generating spec JSON")->required();
  sim->add_option("--seed", seed, "Master seed")->required();
  sim->add_option("--out", out, "Output directory")->required();

  auto* bal = app.add_subcommand("check-balance", "Load data and report similarity diagnostics");
  bal->add_option("--config", config, "Config JSON")->required();

  auto* val = app.add_subcommand("validate", "Check a config without reading data");
  val->add_option("--config", config, "Config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(config, threads);
    if (*sim) return cmd_simulate(spec, seed, out);
    if (*bal) return cmd_check_balance(config);
    if (*val) return cmd_validate(config);
  } catch (const tb::Error& e) {
    std::cerr << e.what() << "\n";
    return e.kind() == tb::ErrorKind::Io ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
