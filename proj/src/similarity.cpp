#include "trialbridge/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "trialbridge/error.hpp"
#include "trialbridge/stats.hpp"

namespace trialbridge {

std::string to_string(TiptonCategory c) {
  switch (c) {
    case TiptonCategory::VeryHigh: return "Very high";
    case TiptonCategory::High: return "High";
    case TiptonCategory::Medium: return "Medium";
    case TiptonCategory::Low: return "Low";
  }
  return "?";
}

std::string interpretation(TiptonCategory c) {
  switch (c) {
    case TiptonCategory::VeryHigh: return "Generalizable";
    case TiptonCategory::High: return "Generalizable";
    case TiptonCategory::Medium: return "Generalizable with caution; expect residual bias and wider intervals";
    case TiptonCategory::Low: return "Not generalizable";
  }
  return "";
}

namespace {

struct Sample {
  std::vector<double> x;
  std::vector<double> w;
};

Sample observed(std::span<const double> x, std::span<const double> w) {
  Sample s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (is_missing(x[i])) continue;
    s.x.push_back(x[i]);
    s.w.push_back(w.empty() ? 1.0 : w[i]);
  }
  return s;
}

struct Moments {
  double mean;
  double var;
};

Moments moments(const Sample& s, bool weighted, bool binary) {
  const double m = weighted ? stats::weighted_mean(s.x, s.w) : stats::mean(s.x);
  if (binary) return {m, m * (1.0 - m)};
  return {m, weighted ? stats::weighted_variance(s.x, s.w) : stats::variance(s.x)};
}

Measure standardized(double m1, double v1, double m0, double v0) {
  const double pooled = std::sqrt((v1 + v0) / 2.0);
  if (!(pooled > 0.0) || !std::isfinite(pooled)) return Measure::undefined();
  return Measure::of((m1 - m0) / pooled);
}

double trapezoid(const std::vector<double>& grid, const std::vector<double>& f) {
  double s = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) s += 0.5 * (f[i] + f[i - 1]) * (grid[i] - grid[i - 1]);
  return s;
}

double silverman(const std::vector<double>& x) {
  const double sd = stats::sd(x);
  const double iqr = stats::nearest_rank(x, 75.0) - stats::nearest_rank(x, 25.0);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  return 0.9 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

/// Gaussian KDE of `x` on `grid`. With `reflect`, mirrored copies at 0 and 1
/// return the boundary mass to [0, 1].
std::vector<double> kde(const std::vector<double>& x, double h, const std::vector<double>& grid, bool reflect) {
  std::vector<double> pts = x;
  if (reflect) {
    for (double v : x) {
      pts.push_back(-v);
      pts.push_back(2.0 - v);
    }
  }
  std::sort(pts.begin(), pts.end());
  const double norm = 1.0 / (static_cast<double>(x.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  const double reach = 8.0 * h;
  std::vector<double> f(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    auto lo = std::lower_bound(pts.begin(), pts.end(), grid[g] - reach);
    double sum = 0.0;
    for (auto it = lo; it != pts.end() && *it <= grid[g] + reach; ++it) {
      const double z = (grid[g] - *it) / h;
      sum += std::exp(-0.5 * z * z);
    }
    f[g] = sum * norm;
  }
  return f;
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

constexpr std::size_t kGridPoints = 512;

}  // namespace

Measure smd(std::span<const double> trial, std::span<const double> target, bool binary,
            std::span<const double> trial_weights) {
  const Sample a = observed(trial, trial_weights);
  const Sample b = observed(target, {});
  if (a.x.size() < 2 || b.x.size() < 2) return Measure::undefined();
  const bool weighted = !trial_weights.empty();
  if (weighted) {
    double sw = 0.0;
    for (double v : a.w) sw += v;
    if (!(sw > 0.0)) return Measure::undefined();
  }
  const Moments m1 = moments(a, weighted, binary);
  const Moments m0 = moments(b, false, binary);
  return standardized(m1.mean, m1.var, m0.mean, m0.var);
}

std::vector<Measure> smd_categorical(std::span<const double> trial, std::span<const double> target,
                                     std::size_t n_levels, std::span<const double> trial_weights) {
  std::vector<Measure> out;
  for (std::size_t k = 1; k < n_levels; ++k) {
    auto indicator = [k](std::span<const double> x) {
      std::vector<double> v(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        v[i] = is_missing(x[i]) ? kMissing : (x[i] == static_cast<double>(k) ? 1.0 : 0.0);
      }
      return v;
    };
    const auto it = indicator(trial);
    const auto ig = indicator(target);
    out.push_back(smd(it, ig, true, trial_weights));
  }
  return out;
}

Measure standardized_delta_p(const PropensityFit& fit) {
  const auto a = fit.ps_trial();
  const auto b = fit.ps_target();
  if (a.empty() || b.empty()) fail(ErrorKind::Estimation, "standardized delta p needs scores on both sides");
  return standardized(stats::mean(a), stats::variance(a), stats::mean(b), stats::variance(b));
}

TiptonCategory classify_tipton(double index) {
  if (!(index >= 0.0 && index <= 1.0)) {
    fail(ErrorKind::Estimation, "overlap index must lie in [0, 1]");
  }
  if (index >= 0.9) return TiptonCategory::VeryHigh;
  if (index >= 0.8) return TiptonCategory::High;
  if (index >= 0.5) return TiptonCategory::Medium;
  return TiptonCategory::Low;
}

TiptonResult tipton_index(std::span<const double> trial_ps, std::span<const double> target_ps, PsScale scale) {
  if (trial_ps.size() < 10 || target_ps.size() < 10) {
    fail(ErrorKind::Estimation, "overlap index needs at least 10 units per side");
  }
  auto transform = [scale](std::span<const double> ps) {
    std::vector<double> v(ps.begin(), ps.end());
    if (scale == PsScale::Logit) {
      for (double& p : v) p = stats::logit(p);
    }
    return v;
  };
  const auto a = transform(trial_ps);
  const auto b = transform(target_ps);
  const double ha = silverman(a);
  const double hb = silverman(b);

  TiptonResult r;
  if (!(ha > 0.0) || !(hb > 0.0)) {
    // Point mass on at least one side.
    const bool a_const = !(ha > 0.0), b_const = !(hb > 0.0);
    if (a_const && b_const && a.front() == b.front()) {
      r.index = Measure::of(1.0);
      r.category = classify_tipton(1.0);
    }
    return r;
  }

  std::vector<double> grid;
  const bool reflect = scale == PsScale::Probability;
  if (reflect) {
    grid = linspace(0.0, 1.0, kGridPoints);
  } else {
    const double pad = 4.0 * std::max(ha, hb);
    const double lo = std::min(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
    const double hi = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
    grid = linspace(lo - pad, hi + pad, kGridPoints);
  }
  auto fa = kde(a, ha, grid, reflect);
  auto fb = kde(b, hb, grid, reflect);
  const double za = trapezoid(grid, fa);
  const double zb = trapezoid(grid, fb);
  if (!(za > 0.0) || !(zb > 0.0)) return r;
  std::vector<double> root(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) root[i] = std::sqrt((fa[i] / za) * (fb[i] / zb));
  const double index = std::clamp(trapezoid(grid, root), 0.0, 1.0);
  r.index = Measure::of(index);
  r.category = classify_tipton(index);
  return r;
}

TiptonResult tipton_index(const PropensityFit& fit, PsScale scale) {
  return tipton_index(fit.ps_trial(), fit.ps_target(), scale);
}

DensityCurve ps_density(std::span<const double> ps, std::size_t points) {
  DensityCurve c;
  c.grid = linspace(0.0, 1.0, std::max<std::size_t>(points, 2));
  std::vector<double> x(ps.begin(), ps.end());
  if (x.size() < 2) {
    c.density.assign(c.grid.size(), 0.0);
    return c;
  }
  double h = silverman(x);
  if (!(h > 0.0)) h = 1e-3;
  const auto fine_grid = linspace(0.0, 1.0, kGridPoints);
  const auto fine = kde(x, h, fine_grid, true);
  const double z = trapezoid(fine_grid, fine);
  c.density = kde(x, h, c.grid, true);
  if (z > 0.0) {
    for (double& d : c.density) d /= z;
  }
  return c;
}

SimilarityReport similarity_report(const StudyTable& stacked, const PropensityFit& fit, const WeightSet* weights,
                                   double smd_threshold) {
  SimilarityReport rep;
  rep.smd_threshold = smd_threshold;
  std::vector<std::size_t> trial_rows, target_rows;
  for (std::size_t i = 0; i < stacked.size(); ++i) (stacked.s[i] == 1 ? trial_rows : target_rows).push_back(i);
  std::vector<double> tw;
  if (weights) {
    for (auto i : trial_rows) tw.push_back(weights->w[i]);
  }
  auto pick = [](const std::vector<double>& col, const std::vector<std::size_t>& rows) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (auto i : rows) v.push_back(col[i]);
    return v;
  };

  for (std::size_t j = 0; j < stacked.schema.size(); ++j) {
    const auto& cov = stacked.schema[j];
    const auto a = pick(stacked.x[j], trial_rows);
    const auto b = pick(stacked.x[j], target_rows);
    std::vector<std::string> names;
    std::vector<Measure> before;
    std::vector<Measure> after;
    if (cov.kind == CovariateKind::Categorical) {
      for (std::size_t k = 1; k < cov.levels.size(); ++k) names.push_back(cov.name + "[" + cov.levels[k] + "]");
      before = smd_categorical(a, b, cov.levels.size());
      if (weights) after = smd_categorical(a, b, cov.levels.size(), tw);
    } else {
      names.push_back(cov.name);
      const bool binary = cov.kind == CovariateKind::Binary;
      before.push_back(smd(a, b, binary));
      if (weights) after.push_back(smd(a, b, binary, tw));
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
      SmdRow row;
      row.covariate = names[k];
      row.unweighted = before[k];
      if (weights) row.weighted = after[k];
      const Measure& judged = weights ? after[k] : before[k];
      row.flagged = judged.defined && std::abs(judged.value) > smd_threshold;
      if (row.flagged) rep.flagged.push_back(row.covariate);
      rep.rows.push_back(std::move(row));
    }
  }

  rep.standardized_delta_p = standardized_delta_p(fit);
  const auto pa = fit.ps_trial();
  const auto pb = fit.ps_target();
  if (pa.size() >= 10 && pb.size() >= 10) {
    const auto t = tipton_index(pa, pb);
    rep.tipton = t.index;
    rep.tipton_category = t.category;
  }
  rep.density_trial = ps_density(pa, 101);
  rep.density_target = ps_density(pb, 101);
  return rep;
}

namespace {
nlohmann::json measure_json(const Measure& m) { return m.defined ? nlohmann::json(m.value) : nlohmann::json(nullptr); }
}  // namespace

nlohmann::json to_json(const SimilarityReport& r) {
  auto rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j{{"covariate", row.covariate},
                     {"smd_unweighted", measure_json(row.unweighted)},
                     {"flagged", row.flagged}};
    j["smd_weighted"] = row.weighted ? measure_json(*row.weighted) : nlohmann::json(nullptr);
    if (!row.unweighted.defined || (row.weighted && !row.weighted->defined)) j["undefined_smd"] = true;
    rows.push_back(j);
  }
  nlohmann::json j{{"smd", rows},
                   {"smd_threshold", r.smd_threshold},
                   {"flagged", r.flagged},
                   {"standardized_delta_p", measure_json(r.standardized_delta_p)},
                   {"standardized_delta_p_note",
                    "no consensus threshold; published trial-versus-registry comparisons with clearly "
                    "different populations reported values of 1.06 to 2.08"},
                   {"tipton_index", measure_json(r.tipton)},
                   {"ps_density",
                    {{"grid", r.density_trial.grid},
                     {"trial", r.density_trial.density},
                     {"target", r.density_target.density}}}};
  if (r.tipton_category) {
    j["tipton_category"] = to_string(*r.tipton_category);
    j["tipton_interpretation"] = interpretation(*r.tipton_category);
  } else {
    j["tipton_category"] = nullptr;
  }
  return j;
}

std::string similarity_markdown(const nlohmann::json& sim) {
  auto fmt = [](const nlohmann::json& v) -> std::string {
    if (v.is_null()) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v.get<double>());
    return buf;
  };
  std::string out = "| Covariate | SMD before | SMD after | Flag |\n|---|---|---|---|\n";
  for (const auto& row : sim.at("smd")) {
    out += "| " + row.at("covariate").get<std::string>() + " | " + fmt(row.at("smd_unweighted")) + " | " +
           fmt(row.at("smd_weighted")) + " | " + (row.at("flagged").get<bool>() ? "yes" : "") + " |\n";
  }
  return out;
}

}  // namespace trialbridge
