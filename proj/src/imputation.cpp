#include "trialbridge/imputation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "trialbridge/engines.hpp"
#include "trialbridge/error.hpp"
#include "trialbridge/parallel.hpp"
#include "trialbridge/stats.hpp"

namespace trialbridge {

std::string to_string(ImputeMethod m) {
  switch (m) {
    case ImputeMethod::Pmm: return "pmm";
    case ImputeMethod::Logistic: return "logistic";
    case ImputeMethod::Polytomous: return "polytomous";
  }
  return "?";
}

namespace {

const std::vector<std::string> kExtraPredictors{"S", "T*S", "Y*S", "S*covariates", "T*S*covariates"};

ImputeMethod default_method(CovariateKind k) {
  switch (k) {
    case CovariateKind::Continuous: return ImputeMethod::Pmm;
    case CovariateKind::Binary: return ImputeMethod::Logistic;
    case CovariateKind::Categorical: return ImputeMethod::Polytomous;
  }
  return ImputeMethod::Pmm;
}

struct Plan {
  std::vector<std::size_t> order;  // covariate indices
  std::map<std::string, ImputeMethod> methods;
};

Plan make_plan(const StudyTable& stacked, const MiceConfig& cfg) {
  struct Item {
    std::size_t j;
    std::size_t missing;
  };
  std::vector<Item> items;
  for (std::size_t j = 0; j < stacked.schema.size(); ++j) {
    const auto& col = stacked.x[j];
    const auto& cov = stacked.schema[j];
    std::size_t miss = 0;
    std::vector<double> observed;
    for (double v : col) {
      if (is_missing(v)) {
        ++miss;
      } else {
        observed.push_back(v);
      }
    }
    if (miss == 0) continue;
    if (observed.size() < cfg.min_observed) {
      fail(ErrorKind::Imputation, "covariate '" + cov.name + "' has only " + std::to_string(observed.size()) +
                                      " observed cells (need " + std::to_string(cfg.min_observed) + ")");
    }
    const auto [lo, hi] = std::minmax_element(observed.begin(), observed.end());
    if (*lo == *hi) {
      fail(ErrorKind::Imputation, "covariate '" + cov.name + "' is constant among observed units; cannot impute");
    }
    items.push_back({j, miss});
  }
  std::sort(items.begin(), items.end(), [&](const Item& a, const Item& b) {
    if (a.missing != b.missing) return a.missing < b.missing;
    return stacked.schema[a.j].name < stacked.schema[b.j].name;
  });

  Plan p;
  for (const auto& it : items) {
    const auto& cov = stacked.schema[it.j];
    ImputeMethod m = default_method(cov.kind);
    if (auto o = cfg.methods.find(cov.name); o != cfg.methods.end()) {
      const bool ok = (o->second == ImputeMethod::Pmm && cov.kind == CovariateKind::Continuous) ||
                      (o->second == ImputeMethod::Logistic && cov.kind == CovariateKind::Binary) ||
                      (o->second == ImputeMethod::Polytomous && cov.kind != CovariateKind::Continuous) ||
                      (o->second == ImputeMethod::Pmm && cov.kind == CovariateKind::Binary);
      if (!ok) {
        fail(ErrorKind::Config, "imputation method '" + to_string(o->second) + "' does not fit " +
                                    to_string(cov.kind) + " covariate '" + cov.name + "'");
      }
      m = o->second;
    }
    p.order.push_back(it.j);
    p.methods[cov.name] = m;
  }
  return p;
}

// Square root factor L with L L' = V, tolerant of singular V.
Eigen::MatrixXd sqrt_factor(const Eigen::MatrixXd& V) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (V + V.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

Eigen::VectorXd draw_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = nd(rng);
  return z;
}

DesignMatrix predictor_design(const StudyTable& cur, std::size_t target_j, const std::vector<double>& extra_s,
                              const std::vector<double>& extra_ts, const std::vector<double>& extra_ys) {
  std::vector<std::string> others;
  for (std::size_t j = 0; j < cur.schema.size(); ++j) {
    if (j != target_j) others.push_back(cur.schema[j].name);
  }
  DesignMatrix base = build_design(cur, others);
  const Eigen::Index n = base.rows(), p = base.cols();
  DesignMatrix X;
  X.values.resize(n, p + 3 + 2 * (p - 1));
  X.values.leftCols(p) = base.values;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    X.values(i, p) = extra_s[u];
    X.values(i, p + 1) = extra_ts[u];
    X.values(i, p + 2) = extra_ys[u];
    for (Eigen::Index k = 1; k < p; ++k) {
      X.values(i, p + 2 + k) = extra_s[u] * base.values(i, k);
      X.values(i, 2 * p + 1 + k) = extra_ts[u] * base.values(i, k);
    }
  }
  X.labels = base.labels;
  X.labels.insert(X.labels.end(), {"S", "T*S", "Y*S"});
  for (const char* prefix : {"S*", "T*S*"}) {
    for (Eigen::Index k = 1; k < p; ++k) X.labels.push_back(prefix + base.labels[static_cast<std::size_t>(k)]);
  }
  return X;
}

DesignMatrix rows_of(const DesignMatrix& X, const std::vector<std::size_t>& rows) {
  DesignMatrix out;
  out.labels = X.labels;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.values.row(static_cast<Eigen::Index>(k)) = X.values.row(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

Eigen::VectorXd perturbed_coef(const FittedModel& fit, double scale, Rng& rng) {
  const Eigen::MatrixXd L = sqrt_factor(fit.unscaled_cov);
  return fit.coef + std::sqrt(scale) * (L * draw_normal(rng, fit.coef.size()));
}

void impute_pmm(std::vector<double>& col, const DesignMatrix& X, const std::vector<std::size_t>& obs,
                const std::vector<std::size_t>& mis, int k, Rng& rng) {
  const DesignMatrix Xo = rows_of(X, obs);
  std::vector<double> yo(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) yo[i] = col[obs[i]];
  const FittedModel fit = fit_linear(Xo, yo);

  const Eigen::Index rank = fit.coef.size() - static_cast<Eigen::Index>(fit.dropped_columns.size());
  const double dof = static_cast<double>(obs.size()) - static_cast<double>(rank);
  double sigma2_star = fit.sigma2;
  if (dof > 0.0) {
    std::chi_squared_distribution<double> chi(dof);
    sigma2_star = fit.sigma2 * dof / chi(rng);
  }
  const Eigen::VectorXd beta_star = perturbed_coef(fit, sigma2_star, rng);

  const Eigen::VectorXd pred_obs = Xo.values * fit.coef;
  const DesignMatrix Xm = rows_of(X, mis);
  const Eigen::VectorXd pred_mis = Xm.values * beta_star;

  std::vector<std::size_t> idx(obs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return pred_obs(static_cast<Eigen::Index>(a)) < pred_obs(static_cast<Eigen::Index>(b));
  });
  std::vector<double> sorted(obs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) sorted[i] = pred_obs(static_cast<Eigen::Index>(idx[i]));

  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 1)), obs.size());
  for (std::size_t m = 0; m < mis.size(); ++m) {
    const double target = pred_mis(static_cast<Eigen::Index>(m));
    std::size_t hi = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), target) - sorted.begin());
    std::size_t lo = hi;  // window [lo, hi)
    while (hi - lo < kk) {
      if (lo == 0) {
        ++hi;
      } else if (hi == sorted.size()) {
        --lo;
      } else if (target - sorted[lo - 1] <= sorted[hi] - target) {
        --lo;
      } else {
        ++hi;
      }
    }
    const std::size_t donor = idx[lo + uniform_index(rng, kk)];
    col[mis[m]] = yo[donor];
  }
}

std::vector<double> drawn_probabilities(const DesignMatrix& Xo, const std::vector<double>& yo, const DesignMatrix& Xm,
                                        Rng& rng) {
  const FittedModel fit = fit_logistic(Xo, yo);
  const Eigen::VectorXd beta_star = perturbed_coef(fit, 1.0, rng);
  const Eigen::VectorXd eta = Xm.values * beta_star;
  std::vector<double> p(static_cast<std::size_t>(eta.size()));
  for (Eigen::Index i = 0; i < eta.size(); ++i) p[static_cast<std::size_t>(i)] = stats::expit(eta(i));
  return p;
}

void impute_binary(std::vector<double>& col, const DesignMatrix& X, const std::vector<std::size_t>& obs,
                   const std::vector<std::size_t>& mis, Rng& rng) {
  std::vector<double> yo(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) yo[i] = col[obs[i]];
  const auto p = drawn_probabilities(rows_of(X, obs), yo, rows_of(X, mis), rng);
  for (std::size_t m = 0; m < mis.size(); ++m) col[mis[m]] = uniform01(rng) < p[m] ? 1.0 : 0.0;
}

void impute_polytomous(std::vector<double>& col, std::size_t n_levels, const DesignMatrix& X,
                       const std::vector<std::size_t>& obs, const std::vector<std::size_t>& mis, Rng& rng) {
  const DesignMatrix Xo = rows_of(X, obs);
  const DesignMatrix Xm = rows_of(X, mis);
  std::vector<std::vector<double>> probs(n_levels, std::vector<double>(mis.size(), 0.0));
  for (std::size_t l = 0; l < n_levels; ++l) {
    std::vector<double> yo(obs.size());
    std::size_t count = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      yo[i] = col[obs[i]] == static_cast<double>(l) ? 1.0 : 0.0;
      count += yo[i] == 1.0;
    }
    if (count == 0) continue;
    if (count == obs.size()) {
      std::fill(probs[l].begin(), probs[l].end(), 1.0);
      continue;
    }
    probs[l] = drawn_probabilities(Xo, yo, Xm, rng);
  }
  for (std::size_t m = 0; m < mis.size(); ++m) {
    double total = 0.0;
    for (std::size_t l = 0; l < n_levels; ++l) total += probs[l][m];
    double u = uniform01(rng) * total;
    std::size_t pick = n_levels - 1;
    for (std::size_t l = 0; l < n_levels; ++l) {
      if (probs[l][m] <= 0.0) continue;
      if (u < probs[l][m]) {
        pick = l;
        break;
      }
      u -= probs[l][m];
      pick = l;
    }
    col[mis[m]] = static_cast<double>(pick);
  }
}

double column_mean(const std::vector<double>& col) { return stats::mean(col); }

StudyTable run_chain(const StudyTable& stacked, const MiceConfig& cfg, const Plan& plan, std::size_t chain,
                     std::map<std::string, std::vector<double>>* means) {
  Rng rng = substream(cfg.seed, "mice-chain", chain);
  StudyTable cur = stacked;
  const std::size_t n = stacked.size();

  std::vector<double> es(n), ets(n), eys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool trial = stacked.s[i] == 1;
    es[i] = trial ? 1.0 : 0.0;
    ets[i] = trial ? stacked.t[i] : 0.0;
    eys[i] = trial ? stacked.y[i] : 0.0;
  }

  std::vector<std::vector<std::size_t>> obs(plan.order.size()), mis(plan.order.size());
  for (std::size_t v = 0; v < plan.order.size(); ++v) {
    const auto& col = stacked.x[plan.order[v]];
    for (std::size_t i = 0; i < n; ++i) (is_missing(col[i]) ? mis[v] : obs[v]).push_back(i);
    auto& target = cur.x[plan.order[v]];
    for (auto i : mis[v]) target[i] = col[obs[v][uniform_index(rng, obs[v].size())]];
    if (means) (*means)[stacked.schema[plan.order[v]].name].push_back(column_mean(target));
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    for (std::size_t v = 0; v < plan.order.size(); ++v) {
      const std::size_t j = plan.order[v];
      const auto& cov = stacked.schema[j];
      const DesignMatrix X = predictor_design(cur, j, es, ets, eys);
      auto& col = cur.x[j];
      switch (plan.methods.at(cov.name)) {
        case ImputeMethod::Pmm: impute_pmm(col, X, obs[v], mis[v], cfg.pmm_k, rng); break;
        case ImputeMethod::Logistic: impute_binary(col, X, obs[v], mis[v], rng); break;
        case ImputeMethod::Polytomous: impute_polytomous(col, cov.levels.size(), X, obs[v], mis[v], rng); break;
      }
      if (means) (*means)[cov.name].push_back(column_mean(col));
    }
  }
  return cur;
}

}  // namespace

StudyTable impute_once(const StudyTable& stacked, const MiceConfig& config, std::size_t chain,
                       std::map<std::string, std::vector<double>>* chain_means) {
  if (config.iterations < 1) fail(ErrorKind::Config, "imputation needs at least one iteration");
  const Plan plan = make_plan(stacked, config);
  return run_chain(stacked, config, plan, chain, chain_means);
}

ImputationSet mice(const StudyTable& stacked, const MiceConfig& config) {
  if (config.m < 1) fail(ErrorKind::Config, "imputation needs at least one completed table");
  if (config.iterations < 1) fail(ErrorKind::Config, "imputation needs at least one iteration");
  const Plan plan = make_plan(stacked, config);

  ImputationSet out;
  out.iterations = config.iterations;
  out.seed = config.seed;
  out.methods = plan.methods;
  out.predictors = kExtraPredictors;
  for (auto j : plan.order) out.order.push_back(stacked.schema[j].name);

  const auto M = static_cast<std::size_t>(config.m);
  out.completed.resize(M);
  std::vector<std::map<std::string, std::vector<double>>> means(M);
  parallel_for(M, [&](std::size_t c) { out.completed[c] = run_chain(stacked, config, plan, c, &means[c]); });
  for (const auto& name : out.order) {
    auto& per_chain = out.chain_means[name];
    for (std::size_t c = 0; c < M; ++c) per_chain.push_back(means[c][name]);
  }
  return out;
}

// ---------------------------------------------------------------------------

PooledEstimate rubin_pool(const std::vector<double>& points, const std::vector<double>& variances, double alpha) {
  if (points.empty() || points.size() != variances.size()) {
    fail(ErrorKind::Estimation, "pooling needs one variance per point estimate");
  }
  PooledEstimate p;
  p.m = static_cast<int>(points.size());
  p.points = points;
  p.variances = variances;
  p.point = stats::mean(points);
  p.within = stats::mean(variances);
  p.between = stats::variance(points);
  const double M = static_cast<double>(p.m);
  p.total = p.within + (1.0 + 1.0 / M) * p.between;
  double q;
  if (p.between > 0.0 && p.m > 1) {
    const double r = (1.0 + 1.0 / M) * p.between;
    const double ratio = p.within / r;
    p.df = (M - 1.0) * (1.0 + ratio) * (1.0 + ratio);
    q = stats::student_t_quantile(1.0 - alpha / 2.0, p.df);
  } else {
    p.df = INFINITY;
    q = stats::z_critical(alpha);
  }
  const double se = std::sqrt(p.total);
  p.ci_lo = p.point - q * se;
  p.ci_hi = p.point + q * se;
  return p;
}

PooledEstimate psi_within(const ImputationSet& imps, const AnalysisSpec& spec, std::uint64_t seed) {
  const std::size_t M = imps.completed.size();
  if (M == 0) fail(ErrorKind::Imputation, "no completed tables to analyze");
  std::vector<double> points(M), vars(M);
  parallel_for(M, [&](std::size_t m) {
    const EffectEstimate e = analyze(imps.completed[m], spec, derive_seed(seed, "psi-within", m));
    points[m] = e.point;
    vars[m] = e.se * e.se;
  });
  return rubin_pool(points, vars, spec.alpha);
}

namespace {

std::vector<std::size_t> stratified_rows(const std::vector<int>& s, Rng& rng) {
  std::vector<std::size_t> trial, target;
  for (std::size_t i = 0; i < s.size(); ++i) (s[i] == 1 ? trial : target).push_back(i);
  std::vector<std::size_t> rows;
  rows.reserve(s.size());
  for (std::size_t k = 0; k < trial.size(); ++k) rows.push_back(trial[uniform_index(rng, trial.size())]);
  for (std::size_t k = 0; k < target.size(); ++k) rows.push_back(target[uniform_index(rng, target.size())]);
  return rows;
}

PropensityFit averaged_scores(const std::vector<StudyTable>& tables, const AnalysisSpec& spec, std::uint64_t seed) {
  const std::size_t n = tables.front().size();
  std::vector<double> avg(n, 0.0);
  for (std::size_t m = 0; m < tables.size(); ++m) {
    PsModelSpec ps = spec.ps;
    ps.forest.seed = derive_seed(seed, "ps-forest", m);
    const PropensityFit fit = estimate_sampling_score(tables[m], ps, spec.scenario);
    for (std::size_t i = 0; i < n; ++i) avg[i] += fit.ps[i];
  }
  for (double& v : avg) v /= static_cast<double>(tables.size());
  return propensity_from_scores(tables.front(), std::move(avg), spec.scenario);
}

}  // namespace

EffectEstimate psi_across(const ImputationSet& imps, const AnalysisSpec& spec, std::uint64_t seed) {
  if (imps.completed.empty()) fail(ErrorKind::Imputation, "no completed tables to analyze");
  const StudyTable& first = imps.completed.front();
  const PropensityFit fit = averaged_scores(imps.completed, spec, seed);

  EffectEstimate est;
  if (spec.method == Method::Ipsw && spec.variance == VarianceKind::Sandwich) {
    est = ipsw_pate(first, trim_stabilize(make_weights(fit), spec.policy), spec.alpha);
  } else {
    est.point = estimate_with_scores(first, fit, spec);
    const int B = spec.bootstrap_replicates;
    if (B < 50) fail(ErrorKind::Config, "bootstrap needs at least 50 replicates");
    const std::uint64_t boot_seed = derive_seed(seed, "psi-across-bootstrap");
    std::vector<double> reps(static_cast<std::size_t>(B), kMissing);
    parallel_for(reps.size(), [&](std::size_t b) {
      Rng rng = substream(boot_seed, "bootstrap-resample", b);
      const auto rows = stratified_rows(first.s, rng);
      std::vector<StudyTable> tables;
      tables.reserve(imps.completed.size());
      for (const auto& t : imps.completed) tables.push_back(t.subset(rows));
      try {
        const PropensityFit f = averaged_scores(tables, spec, derive_seed(boot_seed, "replicate", b));
        reps[b] = estimate_with_scores(tables.front(), f, spec);
      } catch (const Error&) {
      }
    });
    std::vector<double> ok;
    for (double v : reps) {
      if (std::isfinite(v)) ok.push_back(v);
    }
    const std::size_t failed = reps.size() - ok.size();
    if (static_cast<double>(failed) > 0.1 * B) {
      fail(ErrorKind::Estimation, std::to_string(failed) + " of " + std::to_string(B) + " bootstrap replicates failed");
    }
    est.se = stats::sd(ok);
    est.level = 1.0 - spec.alpha;
    if (spec.flavor == BootFlavor::Percentile) {
      std::sort(ok.begin(), ok.end());
      est.ci_lo = stats::nearest_rank_sorted(ok, 100.0 * spec.alpha / 2.0);
      est.ci_hi = stats::nearest_rank_sorted(ok, 100.0 * (1.0 - spec.alpha / 2.0));
    } else {
      const double z = stats::z_critical(spec.alpha);
      est.ci_lo = est.point - z * est.se;
      est.ci_hi = est.point + z * est.se;
    }
    est.variance = {VarianceKind::Bootstrap, B, boot_seed, spec.flavor, failed};
    if (est.se == 0.0) {
      est.degenerate = true;
      est.flags.push_back("degenerate_se");
    }
  }
  est.estimand = Estimand::PATE;
  est.method = spec.method;
  est.n_trial = first.n_trial();
  est.n_target = first.n_target();
  est.flags.push_back("scores averaged across " + std::to_string(imps.completed.size()) + " completed tables");
  return est;
}

EffectEstimate mi_boot(const StudyTable& stacked, const MiceConfig& config, const AnalysisSpec& spec, int B,
                       std::uint64_t seed) {
  const ImputationSet imps = mice(stacked, config);
  std::vector<double> points(imps.completed.size());
  for (std::size_t m = 0; m < points.size(); ++m) {
    points[m] = analysis_point(imps.completed[m], spec, derive_seed(seed, "mi-boot-point", m));
  }
  EffectEstimate est;
  est.point = stats::mean(points);
  const std::uint64_t boot_seed = derive_seed(seed, "mi-boot");
  const BootstrapResult b = bootstrap_ci(
      stacked,
      [&](const StudyTable& rep, std::uint64_t s) {
        MiceConfig c = config;
        c.seed = derive_seed(s, "mice");
        return analysis_point(impute_once(rep, c, 0), spec, s);
      },
      B, boot_seed, spec.flavor, spec.alpha, est.point);
  est.estimand = Estimand::PATE;
  est.method = spec.method;
  est.se = b.se;
  est.ci_lo = b.ci_lo;
  est.ci_hi = b.ci_hi;
  est.level = 1.0 - spec.alpha;
  est.variance = {VarianceKind::Bootstrap, B, boot_seed, spec.flavor, b.failed};
  est.n_trial = stacked.n_trial();
  est.n_target = stacked.n_target();
  if (b.degenerate) {
    est.degenerate = true;
    est.flags.push_back("degenerate_se");
  }
  return est;
}

StudyTable complete_cases(const StudyTable& table) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < table.size(); ++i) {
    bool ok = true;
    for (const auto& col : table.x) {
      if (is_missing(col[i])) {
        ok = false;
        break;
      }
    }
    if (ok) rows.push_back(i);
  }
  return table.subset(rows);
}

nlohmann::json to_json(const PooledEstimate& p) {
  return {{"point", p.point},
          {"within", p.within},
          {"between", p.between},
          {"total", p.total},
          {"df", std::isfinite(p.df) ? nlohmann::json(p.df) : nlohmann::json("inf")},
          {"ci", {p.ci_lo, p.ci_hi}},
          {"m", p.m},
          {"points", p.points},
          {"variances", p.variances}};
}

nlohmann::json imputation_diagnostics(const ImputationSet& imps) {
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& [k, v] : imps.methods) methods[k] = to_string(v);
  nlohmann::json traces = nlohmann::json::object();
  nlohmann::json spread = nlohmann::json::object();
  for (const auto& [name, chains] : imps.chain_means) {
    traces[name] = chains;
    std::vector<double> finals;
    for (const auto& c : chains) {
      if (!c.empty()) finals.push_back(c.back());
    }
    spread[name] = {{"mean_of_final", stats::mean(finals)}, {"sd_of_final", stats::sd(finals)}};
  }
  return {{"m", imps.completed.size()},
          {"iterations", imps.iterations},
          {"seed", imps.seed},
          {"order", imps.order},
          {"methods", methods},
          {"extra_predictors", imps.predictors},
          {"chain_means", traces},
          {"final_iteration_spread", spread}};
}

}  // namespace trialbridge
