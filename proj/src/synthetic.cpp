#include <cmath>
#include <random>

#include "trialbridge/error.hpp"
#include "trialbridge/pipeline.hpp"
#include "trialbridge/rng.hpp"
#include "trialbridge/stats.hpp"

namespace trialbridge {

double DgpSpec::true_pate() const {
  double v = effect_baseline;
  for (const auto& c : covariates) v += c.modification * c.mean;
  return v;
}

double DgpSpec::stacked_selection_intercept() const {
  double v = std::log(static_cast<double>(n_trial) / static_cast<double>(n_target));
  for (const auto& c : covariates) {
    const double g = c.selection;
    if (c.kind == CovariateKind::Binary) {
      v -= std::log(1.0 - c.mean + c.mean * std::exp(g));
    } else {
      v -= g * c.mean + 0.5 * g * g * c.sd * c.sd;
    }
  }
  return v;
}

Schema DgpSpec::schema() const {
  Schema s;
  for (const auto& c : covariates) {
    CovariateSchema cs;
    cs.name = c.name;
    cs.kind = c.kind;
    if (c.kind == CovariateKind::Binary) cs.levels = {"0", "1"};
    cs.is_effect_modifier_candidate = c.modification != 0.0;
    s.push_back(cs);
  }
  return s;
}

namespace {

void validate(const DgpSpec& spec) {
  if (spec.n_trial < 50) fail(ErrorKind::Config, "synthetic trial needs at least 50 units");
  if (spec.n_target < 1) fail(ErrorKind::Config, "synthetic target needs at least one unit");
  if (spec.covariates.empty()) fail(ErrorKind::Config, "synthetic design needs at least one covariate");
  if (!(spec.treat_prob > 0.0 && spec.treat_prob < 1.0)) fail(ErrorKind::Config, "treat_prob must lie in (0, 1)");
  if (!(spec.noise_sd >= 0.0)) fail(ErrorKind::Config, "noise_sd must be non-negative");
  for (const auto& c : spec.covariates) {
    if (c.kind == CovariateKind::Categorical) {
      fail(ErrorKind::Config, "synthetic covariate '" + c.name + "' must be continuous or binary");
    }
    if (c.kind == CovariateKind::Binary && !(c.mean > 0.0 && c.mean < 1.0)) {
      fail(ErrorKind::Config, "binary covariate '" + c.name + "' needs a probability in (0, 1)");
    }
    if (c.kind == CovariateKind::Continuous && !(c.sd > 0.0)) {
      fail(ErrorKind::Config, "continuous covariate '" + c.name + "' needs a positive sd");
    }
  }
  const auto& mm = spec.missingness;
  if (mm.kind != MissingKind::None) {
    if (!(mm.rate > 0.0 && mm.rate < 1.0)) fail(ErrorKind::Config, "missingness rate must lie in (0, 1)");
    for (const auto& v : mm.variables) {
      bool found = false;
      for (const auto& c : spec.covariates) found |= c.name == v;
      if (!found) fail(ErrorKind::Config, "missingness names unknown covariate '" + v + "'");
    }
    if (mm.kind == MissingKind::Mar) {
      bool found = false;
      for (const auto& c : spec.covariates) found |= c.name == mm.depends_on;
      if (!found) fail(ErrorKind::Config, "MAR mechanism depends on unknown covariate '" + mm.depends_on + "'");
    }
  }
}

StudyTable draw_side(const DgpSpec& spec, bool trial, std::uint64_t seed) {
  const std::size_t n = trial ? spec.n_trial : spec.n_target;
  Rng rng = substream(seed, trial ? "synthetic-trial" : "synthetic-target");
  std::normal_distribution<double> nd;

  StudyTable t;
  t.schema = spec.schema();
  t.x.assign(spec.covariates.size(), std::vector<double>(n));
  t.unit_ids.resize(n);
  t.s.assign(n, trial ? 1 : 0);
  t.t.assign(n, kMissing);
  t.y.assign(n, kMissing);
  t.provenance.source = trial ? "synthetic:trial" : "synthetic:target";
  t.provenance.rows_read = n;

  for (std::size_t i = 0; i < n; ++i) {
    t.unit_ids[i] = (trial ? "s" : "p") + std::to_string(i + 1);
    for (std::size_t j = 0; j < spec.covariates.size(); ++j) {
      const auto& c = spec.covariates[j];
      const double g = trial ? c.selection : 0.0;
      if (c.kind == CovariateKind::Binary) {
        const double p = c.mean * std::exp(g) / (1.0 - c.mean + c.mean * std::exp(g));
        t.x[j][i] = uniform01(rng) < p ? 1.0 : 0.0;
      } else {
        t.x[j][i] = c.mean + c.sd * c.sd * g + c.sd * nd(rng);
      }
    }
    if (trial) {
      const double treat = uniform01(rng) < spec.treat_prob ? 1.0 : 0.0;
      double y = spec.outcome_intercept, effect = spec.effect_baseline;
      for (std::size_t j = 0; j < spec.covariates.size(); ++j) {
        y += spec.covariates[j].outcome * t.x[j][i];
        effect += spec.covariates[j].modification * t.x[j][i];
      }
      t.t[i] = treat;
      t.y[i] = y + treat * effect + spec.noise_sd * nd(rng);
    }
  }
  return t;
}

void mask(StudyTable& table, const MissingMechanism& mm, std::uint64_t seed, const char* label) {
  if (mm.kind == MissingKind::None) return;
  Rng rng = substream(seed, label);
  const std::size_t n = table.size();
  std::vector<double> prob(n, mm.rate);
  if (mm.kind == MissingKind::Mar) {
    const auto& dep = table.column(mm.depends_on);
    const double m = stats::mean(dep), s = stats::sd(dep);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = s > 0.0 ? (dep[i] - m) / s : 0.0;
      prob[i] = stats::expit(stats::logit(mm.rate) + z);
    }
  }
  for (const auto& v : mm.variables) {
    auto& col = table.x[table.index_of(v)];
    for (std::size_t i = 0; i < n; ++i) {
      if (uniform01(rng) < prob[i]) col[i] = kMissing;
    }
  }
}

}  // namespace

SyntheticData generate_synthetic(const DgpSpec& spec, std::uint64_t seed) {
  validate(spec);
  SyntheticData d;
  d.trial_full = draw_side(spec, true, seed);
  d.target_full = draw_side(spec, false, seed);
  d.trial = d.trial_full;
  d.target = d.target_full;
  mask(d.trial, spec.missingness, seed, "synthetic-missing-trial");
  mask(d.target, spec.missingness, seed, "synthetic-missing-target");
  d.true_pate = spec.true_pate();
  return d;
}

DgpSpec reference_dgp(std::size_t n_trial, std::size_t n_target) {
  DgpSpec s;
  s.n_trial = n_trial;
  s.n_target = n_target;
  s.outcome_intercept = 0.0;
  s.effect_baseline = 1.0;
  s.noise_sd = 1.0;
  s.treat_prob = 0.5;
  DgpCovariate x1{"x1", CovariateKind::Continuous, 1.0, 1.0, -0.5, 1.0, 0.5};
  DgpCovariate x2{"x2", CovariateKind::Continuous, 0.0, 1.0, 0.5, 0.5, 0.0};
  DgpCovariate x3{"x3", CovariateKind::Binary, 0.4, 0.0, 0.5, 0.5, 0.0};
  s.covariates = {x1, x2, x3};
  return s;
}

DgpSpec dgp_from_json(const nlohmann::json& j) {
  try {
    DgpSpec s;
    s.n_trial = j.value("n_trial", s.n_trial);
    s.n_target = j.value("n_target", s.n_target);
    s.outcome_intercept = j.value("outcome_intercept", s.outcome_intercept);
    s.effect_baseline = j.value("effect_baseline", s.effect_baseline);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.treat_prob = j.value("treat_prob", s.treat_prob);
    for (const auto& c : j.at("covariates")) {
      DgpCovariate d;
      d.name = c.at("name").get<std::string>();
      d.kind = parse_kind(c.value("kind", std::string("continuous")));
      d.mean = c.value("mean", d.kind == CovariateKind::Binary ? 0.5 : 0.0);
      d.sd = c.value("sd", 1.0);
      d.selection = c.value("selection", 0.0);
      d.outcome = c.value("outcome", 0.0);
      d.modification = c.value("modification", 0.0);
      s.covariates.push_back(d);
    }
    if (j.contains("missingness")) {
      const auto& m = j.at("missingness");
      const std::string kind = m.value("kind", std::string("none"));
      if (kind == "mcar") {
        s.missingness.kind = MissingKind::Mcar;
      } else if (kind == "mar") {
        s.missingness.kind = MissingKind::Mar;
        s.missingness.depends_on = m.at("depends_on").get<std::string>();
      } else if (kind != "none") {
        fail(ErrorKind::Config, "unknown missingness kind '" + kind + "'");
      }
      s.missingness.variables = m.value("variables", std::vector<std::string>{});
      s.missingness.rate = m.value("rate", 0.0);
    }
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("malformed simulation spec: ") + e.what());
  }
}

nlohmann::json to_json(const DgpSpec& s) {
  auto covs = nlohmann::json::array();
  for (const auto& c : s.covariates) {
    covs.push_back({{"name", c.name},
                    {"kind", to_string(c.kind)},
                    {"mean", c.mean},
                    {"sd", c.sd},
                    {"selection", c.selection},
                    {"outcome", c.outcome},
                    {"modification", c.modification}});
  }
  nlohmann::json j{{"n_trial", s.n_trial},
                   {"n_target", s.n_target},
                   {"outcome_intercept", s.outcome_intercept},
                   {"effect_baseline", s.effect_baseline},
                   {"noise_sd", s.noise_sd},
                   {"treat_prob", s.treat_prob},
                   {"covariates", covs},
                   {"true_pate", s.true_pate()}};
  if (s.missingness.kind != MissingKind::None) {
    j["missingness"] = {{"kind", s.missingness.kind == MissingKind::Mcar ? "mcar" : "mar"},
                        {"variables", s.missingness.variables},
                        {"rate", s.missingness.rate}};
    if (s.missingness.kind == MissingKind::Mar) j["missingness"]["depends_on"] = s.missingness.depends_on;
  }
  return j;
}

}  // namespace trialbridge
