#include "trialbridge/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "csv.hpp"
#include "trialbridge/error.hpp"
#include "trialbridge/stats.hpp"

namespace trialbridge {

std::string to_string(Scenario s) {
  return s == Scenario::Generalizability ? "generalizability" : "transportability";
}

Scenario parse_scenario(const std::string& s) {
  if (s == "generalizability") return Scenario::Generalizability;
  if (s == "transportability") return Scenario::Transportability;
  fail(ErrorKind::Config, "unknown scenario '" + s + "'");
}

std::vector<double> PropensityFit::ps_trial() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (s[i] == 1) out.push_back(ps[i]);
  }
  return out;
}

std::vector<double> PropensityFit::ps_target() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (s[i] == 0) out.push_back(ps[i]);
  }
  return out;
}

PropensityFit propensity_from_scores(const StudyTable& stacked, std::vector<double> ps, Scenario scenario,
                                     FittedModel model) {
  if (ps.size() != stacked.size()) fail(ErrorKind::Estimation, "score vector length does not match the table");
  PropensityFit fit;
  fit.scenario = scenario;
  fit.model = std::move(model);
  fit.s = stacked.s;
  fit.unit_ids = stacked.unit_ids;
  for (double& p : ps) {
    if (!(p >= kPsLowerClamp)) {
      p = kPsLowerClamp;
      ++fit.clamped_low;
    } else if (p > kPsUpperClamp) {
      p = kPsUpperClamp;
      ++fit.clamped_high;
    }
  }
  fit.ps = std::move(ps);
  fit.population = scenario == Scenario::Transportability
                       ? "stacked trial and target tables"
                       : "stacked tables; target file taken as the full target population";
  return fit;
}

PropensityFit estimate_sampling_score(const StudyTable& stacked, const PsModelSpec& spec, Scenario scenario) {
  const std::size_t n1 = stacked.n_trial();
  if (n1 == 0 || n1 == stacked.size()) {
    fail(ErrorKind::Estimation, "sampling-score estimation needs both trial and target units");
  }
  for (const auto& c : spec.covariates) {
    for (double v : stacked.column(c)) {
      if (is_missing(v)) {
        fail(ErrorKind::Estimation, "covariate '" + c +
                                        "' has missing values; run the imputation step (or complete-case "
                                        "analysis) before estimating sampling scores");
      }
    }
  }
  const DesignMatrix X = build_design(stacked, spec.covariates);
  std::vector<double> y(stacked.s.begin(), stacked.s.end());
  FittedModel model;
  switch (spec.family) {
    case ModelFamily::Logistic: model = fit_logistic(X, y); break;
    case ModelFamily::Forest: model = fit_forest(X, y, spec.forest); break;
    case ModelFamily::Linear: fail(ErrorKind::Config, "sampling score requires a logistic or forest model");
  }
  auto ps = predict(model, X);
  return propensity_from_scores(stacked, std::move(ps), scenario, std::move(model));
}

// ---------------------------------------------------------------------------

double WeightSet::effective_sample_size() const {
  double sw = 0.0, sw2 = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (s[i] != 1) continue;
    sw += w[i];
    sw2 += w[i] * w[i];
  }
  return sw2 > 0.0 ? sw * sw / sw2 : 0.0;
}

std::size_t WeightSet::n_trial() const { return static_cast<std::size_t>(std::count(s.begin(), s.end(), 1)); }

std::vector<double> WeightSet::trial_weights() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (s[i] == 1) out.push_back(w[i]);
  }
  return out;
}

WeightSet make_weights(const PropensityFit& fit) {
  WeightSet ws;
  ws.scheme = fit.scenario;
  ws.s = fit.s;
  ws.unit_ids = fit.unit_ids;
  ws.w.assign(fit.ps.size(), 0.0);
  for (std::size_t i = 0; i < fit.ps.size(); ++i) {
    if (fit.s[i] != 1) continue;
    const double p = fit.ps[i];
    ws.w[i] = fit.scenario == Scenario::Generalizability ? 1.0 / p : (1.0 - p) / p;
  }
  return ws;
}

WeightSet trim_stabilize(const WeightSet& weights, const WeightPolicy& policy) {
  WeightSet out = weights;
  for (const auto& step : policy.steps) {
    std::vector<double> positive;
    for (std::size_t i = 0; i < out.w.size(); ++i) {
      if (out.s[i] == 1 && out.w[i] > 0.0) positive.push_back(out.w[i]);
    }
    if (positive.empty()) fail(ErrorKind::Estimation, "no positive trial weights to trim or normalize");

    WeightStepRecord rec;
    if (const auto* cap = std::get_if<TrimCap>(&step)) {
      if (!(cap->p_lo < cap->p_hi) || cap->p_lo < 0.0 || cap->p_hi > 100.0) {
        fail(ErrorKind::Config, "trimming policy needs 0 <= p_lo < p_hi <= 100");
      }
      std::sort(positive.begin(), positive.end());
      rec.kind = "cap";
      rec.p_lo = cap->p_lo;
      rec.p_hi = cap->p_hi;
      rec.lower = stats::nearest_rank_sorted(positive, cap->p_lo);
      rec.upper = stats::nearest_rank_sorted(positive, cap->p_hi);
      for (std::size_t i = 0; i < out.w.size(); ++i) {
        if (out.s[i] != 1 || out.w[i] <= 0.0) continue;
        if (out.w[i] < rec.lower) {
          out.w[i] = rec.lower;
          ++rec.affected;
        } else if (out.w[i] > rec.upper) {
          out.w[i] = rec.upper;
          ++rec.affected;
        }
      }
    } else {
      rec.kind = "normalize";
      const double m = stats::mean(positive);
      for (std::size_t i = 0; i < out.w.size(); ++i) {
        if (out.s[i] == 1 && out.w[i] > 0.0) {
          out.w[i] /= m;
          ++rec.affected;
        }
      }
      out.normalized = true;
    }
    out.history.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------

PositivityAudit positivity_audit(const PropensityFit& fit, const StudyTable& stacked,
                                 const std::vector<std::string>& modifiers) {
  PositivityAudit a;
  const auto pt = fit.ps_trial();
  const auto pg = fit.ps_target();
  if (!pt.empty()) {
    a.ps_trial_min = *std::min_element(pt.begin(), pt.end());
    a.ps_trial_max = *std::max_element(pt.begin(), pt.end());
  }
  if (!pg.empty()) {
    a.ps_target_min = *std::min_element(pg.begin(), pg.end());
    a.ps_target_max = *std::max_element(pg.begin(), pg.end());
  }
  for (double p : pt) {
    if (p <= kPsLowerClamp) ++a.trial_below_clamp;
    if (p >= kPsUpperClamp) ++a.trial_above_clamp;
  }

  for (const auto& name : modifiers) {
    const auto j = stacked.find(name);
    if (!j) fail(ErrorKind::Schema, "unknown effect modifier '" + name + "'");
    const auto& cov = stacked.schema[*j];
    const auto& col = stacked.x[*j];
    ModifierRange r;
    r.name = name;
    r.kind = cov.kind;
    if (cov.kind == CovariateKind::Categorical) {
      std::set<int> trial_levels, target_levels;
      for (std::size_t i = 0; i < col.size(); ++i) {
        if (is_missing(col[i])) continue;
        (stacked.s[i] == 1 ? trial_levels : target_levels).insert(static_cast<int>(col[i]));
      }
      for (int lv : target_levels) {
        if (!trial_levels.count(lv)) r.target_only_levels.push_back(cov.levels[static_cast<std::size_t>(lv)]);
      }
      for (std::size_t i = 0; i < col.size(); ++i) {
        if (stacked.s[i] == 0 && !is_missing(col[i]) && !trial_levels.count(static_cast<int>(col[i]))) {
          ++r.violating_units;
        }
      }
      if (!trial_levels.empty()) {
        r.trial_min = *trial_levels.begin();
        r.trial_max = *trial_levels.rbegin();
      }
      if (!target_levels.empty()) {
        r.target_min = *target_levels.begin();
        r.target_max = *target_levels.rbegin();
      }
    } else {
      double tmin = INFINITY, tmax = -INFINITY, gmin = INFINITY, gmax = -INFINITY;
      for (std::size_t i = 0; i < col.size(); ++i) {
        if (is_missing(col[i])) continue;
        if (stacked.s[i] == 1) {
          tmin = std::min(tmin, col[i]);
          tmax = std::max(tmax, col[i]);
        } else {
          gmin = std::min(gmin, col[i]);
          gmax = std::max(gmax, col[i]);
        }
      }
      for (std::size_t i = 0; i < col.size(); ++i) {
        if (stacked.s[i] == 0 && !is_missing(col[i]) && (col[i] < tmin || col[i] > tmax)) ++r.violating_units;
      }
      r.trial_min = tmin;
      r.trial_max = tmax;
      r.target_min = gmin;
      r.target_max = gmax;
    }
    r.violation = r.violating_units > 0;
    a.modifiers.push_back(std::move(r));
  }
  return a;
}

nlohmann::json to_json(const PositivityAudit& a) {
  auto mods = nlohmann::json::array();
  for (const auto& m : a.modifiers) {
    nlohmann::json j{{"name", m.name},
                     {"kind", to_string(m.kind)},
                     {"violation", m.violation},
                     {"violating_units", m.violating_units}};
    if (m.kind == CovariateKind::Categorical) {
      j["target_only_levels"] = m.target_only_levels;
    } else {
      j["trial_range"] = {m.trial_min, m.trial_max};
      j["target_range"] = {m.target_min, m.target_max};
    }
    mods.push_back(j);
  }
  return {{"ps_trial_range", {a.ps_trial_min, a.ps_trial_max}},
          {"ps_target_range", {a.ps_target_min, a.ps_target_max}},
          {"trial_below_clamp", a.trial_below_clamp},
          {"trial_above_clamp", a.trial_above_clamp},
          {"clamp_bounds", {kPsLowerClamp, kPsUpperClamp}},
          {"modifiers", mods}};
}

nlohmann::json to_json(const WeightSet& w) {
  auto hist = nlohmann::json::array();
  for (const auto& h : w.history) {
    nlohmann::json j{{"kind", h.kind}, {"affected", h.affected}};
    if (h.kind == "cap") {
      j["percentiles"] = {h.p_lo, h.p_hi};
      j["bounds"] = {h.lower, h.upper};
    }
    hist.push_back(j);
  }
  const auto tw = w.trial_weights();
  return {{"scheme", to_string(w.scheme)},
          {"normalized", w.normalized},
          {"steps", hist},
          {"n_trial", w.n_trial()},
          {"effective_sample_size", w.effective_sample_size()},
          {"min", tw.empty() ? 0.0 : *std::min_element(tw.begin(), tw.end())},
          {"max", tw.empty() ? 0.0 : *std::max_element(tw.begin(), tw.end())}};
}

std::string weights_csv(const WeightSet& w) {
  std::string out = "unit_id,weight\n";
  char buf[40];
  for (std::size_t i = 0; i < w.w.size(); ++i) {
    if (w.s[i] != 1) continue;
    std::snprintf(buf, sizeof buf, "%.17g", w.w[i]);
    out += csv::escape(w.unit_ids[i]) + "," + buf + "\n";
  }
  return out;
}

}  // namespace trialbridge
