#include "trialbridge/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "trialbridge/engines.hpp"
#include "trialbridge/error.hpp"
#include "trialbridge/parallel.hpp"
#include "trialbridge/stats.hpp"

namespace trialbridge {

std::string to_string(Estimand e) { return e == Estimand::TATE ? "TATE" : "PATE"; }

std::string to_string(Method m) {
  switch (m) {
    case Method::DifferenceInMeans: return "difference_in_means";
    case Method::Ipsw: return "ipsw";
    case Method::Gcomp: return "gcomp";
    case Method::Dr: return "dr";
  }
  return "?";
}

std::string to_string(VarianceKind v) {
  switch (v) {
    case VarianceKind::None: return "none";
    case VarianceKind::Analytic: return "analytic";
    case VarianceKind::Sandwich: return "sandwich";
    case VarianceKind::Bootstrap: return "bootstrap";
    case VarianceKind::Rubin: return "rubin";
    case VarianceKind::Carried: return "carried";
  }
  return "?";
}

std::string to_string(BootFlavor f) { return f == BootFlavor::Percentile ? "percentile" : "normal"; }

Method parse_method(const std::string& s) {
  if (s == "difference_in_means") return Method::DifferenceInMeans;
  if (s == "ipsw") return Method::Ipsw;
  if (s == "gcomp") return Method::Gcomp;
  if (s == "dr") return Method::Dr;
  fail(ErrorKind::Config, "unknown estimator '" + s + "'");
}

BootFlavor parse_flavor(const std::string& s) {
  if (s == "percentile") return BootFlavor::Percentile;
  if (s == "normal") return BootFlavor::Normal;
  fail(ErrorKind::Config, "unknown bootstrap interval flavor '" + s + "'");
}

void set_normal_interval(EffectEstimate& est, double se, double alpha) {
  const double z = stats::z_critical(alpha);
  est.se = se;
  est.level = 1.0 - alpha;
  est.ci_lo = est.point - z * se;
  est.ci_hi = est.point + z * se;
  if (se == 0.0) {
    est.degenerate = true;
    est.flags.push_back("degenerate_se");
  }
}

namespace {

struct Arms {
  std::vector<double> y1, y0;
};

Arms trial_arms(const StudyTable& table) {
  Arms a;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table.s[i] != 1) continue;
    (table.t[i] == 1.0 ? a.y1 : a.y0).push_back(table.y[i]);
  }
  return a;
}

std::vector<std::size_t> rows_where(const StudyTable& table, int s, int t = -1) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table.s[i] != s) continue;
    if (t >= 0 && table.t[i] != static_cast<double>(t)) continue;
    rows.push_back(i);
  }
  return rows;
}

struct OutcomeFits {
  FittedModel m1, m0;
};

FittedModel fit_outcome(const StudyTable& arm, const OutcomeSpec& spec, int which) {
  const DesignMatrix X = build_design(arm, spec.covariates, spec.saturated);
  if (X.rows() < X.cols()) {
    fail(ErrorKind::Estimation, std::string(which ? "treated" : "control") + " arm has " +
                                    std::to_string(X.rows()) + " units for " + std::to_string(X.cols()) +
                                    " outcome-model columns");
  }
  if (spec.type == OutcomeType::Binary) return fit_logistic(X, arm.y);
  return fit_linear(X, arm.y);
}

OutcomeFits fit_outcomes(const StudyTable& stacked, const OutcomeSpec& spec) {
  const auto r1 = rows_where(stacked, 1, 1);
  const auto r0 = rows_where(stacked, 1, 0);
  if (r1.empty() || r0.empty()) fail(ErrorKind::Estimation, "trial must contain both arms");
  return {fit_outcome(stacked.subset(r1), spec, 1), fit_outcome(stacked.subset(r0), spec, 0)};
}

double gcomp_point(const StudyTable& stacked, const OutcomeSpec& spec, const OutcomeFits& fits) {
  const StudyTable target = stacked.subset(rows_where(stacked, 0));
  if (target.size() == 0) fail(ErrorKind::Estimation, "g-computation needs target units");
  const DesignMatrix X = build_design(target, spec.covariates, spec.saturated);
  const auto p1 = predict(fits.m1, X);
  const auto p0 = predict(fits.m0, X);
  double s = 0.0;
  for (std::size_t i = 0; i < p1.size(); ++i) s += p1[i] - p0[i];
  return s / static_cast<double>(p1.size());
}

void check_alignment(const StudyTable& stacked, const WeightSet& w) {
  if (w.w.size() != stacked.size() || w.s != stacked.s) {
    fail(ErrorKind::Estimation, "weights are not aligned with the table rows");
  }
}

EffectEstimate base_estimate(const StudyTable& stacked, Estimand e, Method m) {
  EffectEstimate est;
  est.estimand = e;
  est.method = m;
  est.n_trial = stacked.n_trial();
  est.n_target = stacked.n_target();
  return est;
}

}  // namespace

EffectEstimate tate(const StudyTable& table, double alpha) {
  const Arms a = trial_arms(table);
  if (a.y1.empty() || a.y0.empty()) fail(ErrorKind::Estimation, "trial effect needs both arms; found a single arm");
  EffectEstimate est = base_estimate(table, Estimand::TATE, Method::DifferenceInMeans);
  est.point = stats::mean(a.y1) - stats::mean(a.y0);
  const double se = std::sqrt(stats::variance(a.y1) / static_cast<double>(a.y1.size()) +
                              stats::variance(a.y0) / static_cast<double>(a.y0.size()));
  est.variance.kind = VarianceKind::Analytic;
  set_normal_interval(est, se, alpha);
  return est;
}

EffectEstimate ipsw_pate(const StudyTable& stacked, const WeightSet& weights, double alpha) {
  check_alignment(stacked, weights);
  double sw1 = 0.0, sw0 = 0.0, swy1 = 0.0, swy0 = 0.0;
  for (std::size_t i = 0; i < stacked.size(); ++i) {
    if (stacked.s[i] != 1) continue;
    const double w = weights.w[i];
    if (stacked.t[i] == 1.0) {
      sw1 += w;
      swy1 += w * stacked.y[i];
    } else {
      sw0 += w;
      swy0 += w * stacked.y[i];
    }
  }
  if (!(sw1 > 0.0) || !(sw0 > 0.0)) fail(ErrorKind::Estimation, "an arm has zero total weight");
  const double mu1 = swy1 / sw1, mu0 = swy0 / sw0;

  EffectEstimate est = base_estimate(stacked, Estimand::PATE, Method::Ipsw);
  est.point = mu1 - mu0;

  // HC0 sandwich for the weighted regression of y on (1, T).
  Eigen::Matrix2d bread = Eigen::Matrix2d::Zero(), meat = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < stacked.size(); ++i) {
    if (stacked.s[i] != 1) continue;
    const double w = weights.w[i];
    const Eigen::Vector2d xi(1.0, stacked.t[i]);
    const double e = stacked.y[i] - (stacked.t[i] == 1.0 ? mu1 : mu0);
    bread += w * xi * xi.transpose();
    meat += w * w * e * e * xi * xi.transpose();
  }
  const Eigen::Matrix2d binv = bread.inverse();
  const Eigen::Matrix2d V = binv * meat * binv;
  est.variance.kind = VarianceKind::Sandwich;
  set_normal_interval(est, std::sqrt(std::max(V(1, 1), 0.0)), alpha);
  return est;
}

EffectEstimate gcomp_pate(const StudyTable& stacked, const OutcomeSpec& outcome) {
  const OutcomeFits fits = fit_outcomes(stacked, outcome);
  EffectEstimate est = base_estimate(stacked, Estimand::PATE, Method::Gcomp);
  est.point = gcomp_point(stacked, outcome, fits);
  return est;
}

EffectEstimate dr_pate(const StudyTable& stacked, const WeightSet& weights, const OutcomeSpec& outcome,
                       std::optional<double> e_trial) {
  check_alignment(stacked, weights);
  const OutcomeFits fits = fit_outcomes(stacked, outcome);
  const double g = gcomp_point(stacked, outcome, fits);

  const auto trial_rows = rows_where(stacked, 1);
  const StudyTable trial = stacked.subset(trial_rows);
  double e = 0.0;
  if (e_trial) {
    e = *e_trial;
  } else {
    for (double t : trial.t) e += t;
    e /= static_cast<double>(trial.size());
  }
  if (!(e > 0.0 && e < 1.0)) fail(ErrorKind::Estimation, "randomization probability must lie in (0, 1)");

  const DesignMatrix X = build_design(trial, outcome.covariates, outcome.saturated);
  const auto m1 = predict(fits.m1, X);
  const auto m0 = predict(fits.m0, X);
  double sw = 0.0, swpsi = 0.0;
  for (std::size_t k = 0; k < trial_rows.size(); ++k) {
    const double w = weights.w[trial_rows[k]];
    const double t = trial.t[k];
    const double resid = trial.y[k] - (t == 1.0 ? m1[k] : m0[k]);
    const double psi = (t / e - (1.0 - t) / (1.0 - e)) * resid;
    sw += w;
    swpsi += w * psi;
  }
  if (!(sw > 0.0)) fail(ErrorKind::Estimation, "trial weights sum to zero");

  EffectEstimate est = base_estimate(stacked, Estimand::PATE, Method::Dr);
  est.point = g + swpsi / sw;
  return est;
}

// ---------------------------------------------------------------------------

StudyTable bootstrap_resample(const StudyTable& stacked, Rng& rng) {
  const auto trial = rows_where(stacked, 1);
  const auto target = rows_where(stacked, 0);
  std::vector<std::size_t> rows;
  rows.reserve(stacked.size());
  for (std::size_t k = 0; k < trial.size(); ++k) rows.push_back(trial[uniform_index(rng, trial.size())]);
  for (std::size_t k = 0; k < target.size(); ++k) rows.push_back(target[uniform_index(rng, target.size())]);
  return stacked.subset(rows);
}

BootstrapResult bootstrap_ci(const StudyTable& stacked, const Procedure& procedure, int B, std::uint64_t seed,
                             BootFlavor flavor, double alpha, std::optional<double> point) {
  if (B < 50) fail(ErrorKind::Config, "bootstrap needs at least 50 replicates");
  std::vector<double> values(static_cast<std::size_t>(B), kMissing);
  std::vector<std::string> causes(static_cast<std::size_t>(B));
  parallel_for(values.size(), [&](std::size_t b) {
    Rng rng = substream(seed, "bootstrap-resample", b);
    try {
      const StudyTable rep = bootstrap_resample(stacked, rng);
      const double v = procedure(rep, derive_seed(seed, "bootstrap-replicate", b));
      if (!std::isfinite(v)) throw Error(ErrorKind::Estimation, "non-finite replicate estimate");
      values[b] = v;
    } catch (const Error& e) {
      causes[b] = e.what();
    }
  });

  BootstrapResult r;
  std::set<std::string> distinct;
  for (std::size_t b = 0; b < values.size(); ++b) {
    if (is_missing(values[b])) {
      ++r.failed;
      distinct.insert(causes[b]);
    } else {
      r.replicates.push_back(values[b]);
    }
  }
  r.failure_causes.assign(distinct.begin(), distinct.end());
  if (static_cast<double>(r.failed) > 0.1 * B) {
    std::string msg = std::to_string(r.failed) + " of " + std::to_string(B) + " bootstrap replicates failed:";
    for (const auto& c : r.failure_causes) msg += " [" + c + "]";
    fail(ErrorKind::Estimation, msg);
  }
  r.se = stats::sd(r.replicates);
  r.degenerate = r.se == 0.0;
  if (flavor == BootFlavor::Percentile) {
    std::vector<double> sorted = r.replicates;
    std::sort(sorted.begin(), sorted.end());
    r.ci_lo = stats::nearest_rank_sorted(sorted, 100.0 * alpha / 2.0);
    r.ci_hi = stats::nearest_rank_sorted(sorted, 100.0 * (1.0 - alpha / 2.0));
  } else {
    const double centre = point ? *point : procedure(stacked, derive_seed(seed, "bootstrap-point"));
    const double z = stats::z_critical(alpha);
    r.ci_lo = centre - z * r.se;
    r.ci_hi = centre + z * r.se;
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

PsModelSpec seeded_ps(const PsModelSpec& ps, std::uint64_t seed) {
  PsModelSpec out = ps;
  out.forest.seed = derive_seed(seed, "ps-forest");
  return out;
}

}  // namespace

double estimate_with_scores(const StudyTable& stacked, const PropensityFit& fit, const AnalysisSpec& spec) {
  const WeightSet w = trim_stabilize(make_weights(fit), spec.policy);
  switch (spec.method) {
    case Method::Ipsw: return ipsw_pate(stacked, w, spec.alpha).point;
    case Method::Dr: return dr_pate(stacked, w, spec.outcome, spec.e_trial).point;
    case Method::Gcomp: return gcomp_pate(stacked, spec.outcome).point;
    case Method::DifferenceInMeans: return tate(stacked, spec.alpha).point;
  }
  return kMissing;
}

double analysis_point(const StudyTable& stacked, const AnalysisSpec& spec, std::uint64_t seed) {
  switch (spec.method) {
    case Method::DifferenceInMeans: return tate(stacked, spec.alpha).point;
    case Method::Gcomp: return gcomp_pate(stacked, spec.outcome).point;
    case Method::Ipsw:
    case Method::Dr: break;
  }
  const PropensityFit fit = estimate_sampling_score(stacked, seeded_ps(spec.ps, seed), spec.scenario);
  return estimate_with_scores(stacked, fit, spec);
}

EffectEstimate analyze(const StudyTable& stacked, const AnalysisSpec& spec, std::uint64_t seed) {
  if (spec.variance == VarianceKind::Sandwich && spec.method != Method::Ipsw) {
    fail(ErrorKind::Config, "sandwich variance is only available for the ipsw estimator");
  }
  const Estimand estimand = spec.method == Method::DifferenceInMeans ? Estimand::TATE : Estimand::PATE;
  EffectEstimate est;
  if (spec.method == Method::Ipsw && spec.variance == VarianceKind::Sandwich) {
    const PropensityFit fit = estimate_sampling_score(stacked, seeded_ps(spec.ps, seed), spec.scenario);
    est = ipsw_pate(stacked, trim_stabilize(make_weights(fit), spec.policy), spec.alpha);
  } else if (spec.method == Method::DifferenceInMeans && spec.variance != VarianceKind::Bootstrap) {
    est = tate(stacked, spec.alpha);
  } else {
    est = base_estimate(stacked, estimand, spec.method);
    est.point = analysis_point(stacked, spec, seed);
    const std::uint64_t boot_seed = derive_seed(seed, "bootstrap");
    const BootstrapResult b = bootstrap_ci(
        stacked, [&spec](const StudyTable& t, std::uint64_t s) { return analysis_point(t, spec, s); },
        spec.bootstrap_replicates, boot_seed, spec.flavor, spec.alpha, est.point);
    est.se = b.se;
    est.ci_lo = b.ci_lo;
    est.ci_hi = b.ci_hi;
    est.level = 1.0 - spec.alpha;
    est.variance = {VarianceKind::Bootstrap, spec.bootstrap_replicates, boot_seed, spec.flavor, b.failed};
    if (b.degenerate) {
      est.degenerate = true;
      est.flags.push_back("degenerate_se");
    }
    if (b.failed > 0) est.flags.push_back(std::to_string(b.failed) + " bootstrap replicates failed");
  }
  est.estimand = estimand;
  est.method = spec.method;
  est.n_trial = stacked.n_trial();
  est.n_target = stacked.n_target();
  return est;
}

// ---------------------------------------------------------------------------

SubgroupTable subgroup_effects(const StudyTable& table, const std::string& covariate, int quantile_bins,
                               double alpha) {
  const auto j = table.index_of(covariate);
  const auto& cov = table.schema[j];
  const auto trial_rows = rows_where(table, 1);

  SubgroupTable out;
  out.covariate = covariate;
  out.note = "exploratory post hoc subgroups on trial data; no multiplicity adjustment and limited power "
             "to detect effect heterogeneity";

  std::vector<std::pair<std::string, std::vector<std::size_t>>> bins;
  if (cov.kind == CovariateKind::Continuous) {
    if (quantile_bins < 1) fail(ErrorKind::Config, "quantile bin count must be positive");
    std::vector<double> vals;
    for (auto i : trial_rows) {
      if (!is_missing(table.x[j][i])) vals.push_back(table.x[j][i]);
    }
    if (vals.empty()) fail(ErrorKind::Estimation, "subgroup covariate '" + covariate + "' has no observed values");
    std::sort(vals.begin(), vals.end());
    std::vector<double> cuts;
    for (int k = 1; k < quantile_bins; ++k) {
      const double c = stats::nearest_rank_sorted(vals, 100.0 * k / quantile_bins);
      if (cuts.empty() || c > cuts.back()) cuts.push_back(c);
    }
    cuts.push_back(vals.back());
    double lo = vals.front();
    for (std::size_t b = 0; b < cuts.size(); ++b) {
      std::vector<std::size_t> rows;
      for (auto i : trial_rows) {
        const double v = table.x[j][i];
        if (is_missing(v)) continue;
        const bool above_prev = b == 0 || v > cuts[b - 1];
        if (above_prev && v <= cuts[b]) rows.push_back(i);
      }
      char label[96];
      std::snprintf(label, sizeof label, "%c%.4g, %.4g]", b == 0 ? '[' : '(', lo, cuts[b]);
      bins.emplace_back(label, std::move(rows));
      lo = cuts[b];
    }
  } else {
    for (std::size_t k = 0; k < cov.levels.size(); ++k) {
      std::vector<std::size_t> rows;
      for (auto i : trial_rows) {
        if (table.x[j][i] == static_cast<double>(k)) rows.push_back(i);
      }
      if (!rows.empty()) bins.emplace_back(cov.levels[k], std::move(rows));
    }
  }

  for (auto& [label, rows] : bins) {
    SubgroupBin bin;
    bin.label = label;
    bin.n = rows.size();
    for (auto i : rows) (table.t[i] == 1.0 ? bin.n_treated : bin.n_control)++;
    if (bin.n_treated == 0 || bin.n_control == 0) {
      bin.flagged = true;
    } else {
      bin.estimate = tate(table.subset(rows), alpha);
    }
    out.bins.push_back(std::move(bin));
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const EffectEstimate& e) {
  nlohmann::json var{{"method", to_string(e.variance.kind)}};
  if (e.variance.kind == VarianceKind::Bootstrap) {
    var["replicates"] = e.variance.replicates;
    var["seed"] = e.variance.seed;
    var["flavor"] = to_string(e.variance.flavor);
    var["failed"] = e.variance.failed;
  }
  return {{"estimand", to_string(e.estimand)},
          {"method", to_string(e.method)},
          {"point", e.point},
          {"se", e.se},
          {"ci", {e.ci_lo, e.ci_hi}},
          {"level", e.level},
          {"variance", var},
          {"n_trial", e.n_trial},
          {"n_target", e.n_target},
          {"degenerate", e.degenerate},
          {"flags", e.flags}};
}

EffectEstimate effect_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) { return v.is_null() ? kMissing : v.get<double>(); };
  EffectEstimate e;
  e.estimand = j.at("estimand").get<std::string>() == "TATE" ? Estimand::TATE : Estimand::PATE;
  e.method = parse_method(j.at("method").get<std::string>());
  e.point = num(j.at("point"));
  e.se = num(j.at("se"));
  e.ci_lo = num(j.at("ci").at(0));
  e.ci_hi = num(j.at("ci").at(1));
  e.level = j.at("level").get<double>();
  e.n_trial = j.value("n_trial", std::size_t{0});
  e.n_target = j.value("n_target", std::size_t{0});
  e.degenerate = j.value("degenerate", false);
  e.flags = j.value("flags", std::vector<std::string>{});
  const auto& v = j.at("variance");
  const auto kind = v.at("method").get<std::string>();
  for (auto k : {VarianceKind::None, VarianceKind::Analytic, VarianceKind::Sandwich, VarianceKind::Bootstrap,
                 VarianceKind::Rubin, VarianceKind::Carried}) {
    if (to_string(k) == kind) e.variance.kind = k;
  }
  if (e.variance.kind == VarianceKind::Bootstrap) {
    e.variance.replicates = v.at("replicates").get<int>();
    e.variance.seed = v.at("seed").get<std::uint64_t>();
    e.variance.flavor = parse_flavor(v.at("flavor").get<std::string>());
    e.variance.failed = v.at("failed").get<std::size_t>();
  }
  return e;
}

nlohmann::json to_json(const SubgroupTable& t) {
  auto bins = nlohmann::json::array();
  for (const auto& b : t.bins) {
    nlohmann::json j{{"label", b.label},
                     {"n", b.n},
                     {"n_treated", b.n_treated},
                     {"n_control", b.n_control},
                     {"flagged", b.flagged}};
    j["estimate"] = b.estimate ? to_json(*b.estimate) : nlohmann::json(nullptr);
    bins.push_back(j);
  }
  return {{"covariate", t.covariate}, {"bins", bins}, {"note", t.note}};
}

}  // namespace trialbridge
