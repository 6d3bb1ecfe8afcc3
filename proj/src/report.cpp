#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "trialbridge/error.hpp"
#include "trialbridge/pipeline.hpp"
#include "trialbridge/similarity.hpp"

namespace trialbridge {

using nlohmann::json;

json canonicalize(const json& j) {
  switch (j.type()) {
    case json::value_t::object: {
      json out = json::object();
      for (const auto& [k, v] : j.items()) out[k] = canonicalize(v);
      return out;
    }
    case json::value_t::array: {
      json out = json::array();
      for (const auto& v : j) out.push_back(canonicalize(v));
      return out;
    }
    case json::value_t::number_float: {
      const double d = j.get<double>();
      if (!std::isfinite(d)) return nullptr;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", d);
      double r = std::strtod(buf, nullptr);
      if (r == 0.0) r = 0.0;  // drop negative zero
      return r;
    }
    default: return j;
  }
}

std::string canonical_dump(const json& j) { return canonicalize(j).dump(2) + "\n"; }

namespace {

std::string num(const json& v, int digits = 2) {
  if (v.is_null()) return "n/a";
  if (v.is_string()) return v.get<std::string>();
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v.get<double>());
  return buf;
}

std::string with_ci(const json& est) {
  if (est.is_null()) return "n/a";
  return num(est.at("point")) + " (" + num(est.at("ci").at(0)) + ", " + num(est.at("ci").at(1)) + ")";
}

std::string yes_no(const json& v) {
  if (v.is_null()) return "n/a";
  return v.get<bool>() ? "Yes" : "No";
}

std::string text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

bool has_design(const json& report) {
  for (const auto& v : report.at("verdict")) {
    if (!v.at("design").is_null()) return true;
  }
  return false;
}

}  // namespace

std::string render_markdown(const json& r) {
  std::string md = "# Trial-to-target translation report\n\n";
  for (const auto& c : r.at("caveats")) {
    const std::string s = c.get<std::string>();
    if (s.rfind("NOT GENERALIZABLE", 0) == 0) md += "> **" + s + "**\n\n";
  }

  const auto& in = r.at("inputs");
  const auto& checklist = r.at("checklist");
  auto checklist_rows = [&](int step) {
    std::string out;
    for (const auto& item : checklist) {
      if (item.at("step").get<int>() != step) continue;
      const auto& a = item.at("reviewed_by_analyst");
      out += "| " + item.at("question").get<std::string>() + " | " +
             (a.is_null() ? std::string("not answered") : (a.get<bool>() ? "yes" : "no")) + " |\n";
    }
    return out.empty() ? out : "| Question | Reviewed by analyst |\n|---|---|\n" + out + "\n";
  };

  md += "## Step 1. Appropriateness\n\n" + checklist_rows(1);

  md += "## Step 2. Data availability\n\n";
  md += "| Source | Rows read | Units analyzed |\n|---|---|---|\n";
  md += "| Trial | " + text(in.at("trial_rows_read")) + " | " + text(in.at("trial_units")) + " |\n";
  md += "| Target | " + text(in.at("target_rows_read")) + " | " + text(in.at("target_units")) + " |\n\n";
  md += "Trial-to-target size ratio: " + num(in.at("size_ratio"), 4) + "\n\n";
  if (!in.at("dropped_covariates").empty()) {
    md += "Dropped during harmonization:";
    for (const auto& d : in.at("dropped_covariates")) md += " " + d.get<std::string>();
    md += "\n\n";
  }
  {
    const auto& m = r.at("missingness");
    md += "| Covariate | Missing (all) | Missing (trial) | Missing (target) |\n|---|---|---|---|\n";
    for (const auto& [name, v] : m.at("variables").items()) {
      md += "| " + name + " | " + num(v.at("all"), 3) + " | " + num(v.at("trial"), 3) + " | " +
            num(v.at("target"), 3) + " |\n";
    }
    md += "\n" + checklist_rows(2);
  }

  md += "## Step 3. Identifiability assumptions\n\n";
  {
    const auto& a = r.at("positivity_audit");
    md += "Trial sampling scores range " + num(a.at("ps_trial_range")[0], 4) + " to " +
          num(a.at("ps_trial_range")[1], 4) + "; target " + num(a.at("ps_target_range")[0], 4) + " to " +
          num(a.at("ps_target_range")[1], 4) + ".\n\n";
    if (!a.at("modifiers").empty()) {
      md += "| Effect modifier | Target units outside trial range | Violation |\n|---|---|---|\n";
      for (const auto& m : a.at("modifiers")) {
        md += "| " + m.at("name").get<std::string>() + " | " + text(m.at("violating_units")) + " | " +
              yes_no(m.at("violation")) + " |\n";
      }
      md += "\n";
    }
    for (const auto& c : r.at("caveats")) {
      const std::string s = c.get<std::string>();
      if (s.rfind("NOT GENERALIZABLE", 0) != 0) md += "- " + s + "\n";
    }
    md += "\n" + checklist_rows(3);
  }

  md += "## Step 4. Methods and estimates\n\n";
  {
    const auto& w = r.at("weights");
    md += "Scenario: " + r.at("sampling_score").at("scenario").get<std::string>() + ". Weights: effective sample size " +
          num(w.at("effective_sample_size"), 1) + " of " + text(w.at("n_trial")) + " trial units, range " +
          num(w.at("min"), 3) + " to " + num(w.at("max"), 3) + ".\n\n";
    md += "| Estimand | Method | Estimate (CI) | SE | Variance |\n|---|---|---|---|---|\n";
    for (const auto& e : r.at("estimates")) {
      md += "| " + e.at("estimand").get<std::string>() + " | " + e.at("method").get<std::string>() + " | " +
            with_ci(e) + " | " + num(e.at("se"), 3) + " | " + e.at("variance").at("method").get<std::string>() + " |\n";
    }
    md += "\n";
  }

  md += "## Step 5. Population similarity\n\n";
  {
    const auto& s = r.at("similarity");
    md += similarity_markdown(s) + "\n";
    md += "Standardized delta-p: " + num(s.at("standardized_delta_p"), 3) + "\n\n";
    md += "Tipton index: " + num(s.at("tipton_index"), 3);
    if (!s.at("tipton_category").is_null()) {
      md += " (" + s.at("tipton_category").get<std::string>() + ": " +
            s.at("tipton_interpretation").get<std::string>() + ")";
    }
    md += "\n\n";
  }

  md += "## Step 6. Missing data\n\n";
  {
    const auto& m = r.at("missing_data");
    md += "Strategy: " + m.at("strategy").get<std::string>() + "; applied: " + yes_no(m.at("applied")) + ".\n\n";
    if (!r.at("pooled").empty()) {
      md += "| Estimator | Pooled estimate (CI) | Within | Between | Total | M |\n|---|---|---|---|---|---|\n";
      for (const auto& p : r.at("pooled")) {
        md += "| " + p.at("estimator").get<std::string>() + " | " + with_ci(p) + " | " + num(p.at("within"), 4) +
              " | " + num(p.at("between"), 4) + " | " + num(p.at("total"), 4) + " | " + text(p.at("m")) + " |\n";
      }
      md += "\n";
    }
  }

  md += "## Step 7. Sensitivity analysis\n\n";
  if (!r.at("sensitivity").empty()) {
    md += "| Scenario | Perturbation | PATE | Regulatory | Estimate | Standardized Difference | Note |\n"
          "|---|---|---|---|---|---|---|\n";
    for (const auto& row : r.at("sensitivity")) {
      const bool ok = row.at("error").is_null();
      md += "| " + row.at("label").get<std::string>() + " | " + row.at("perturbation").get<std::string>() + " | " +
            with_ci(row.at("pate")) + " | " + (ok ? yes_no(row.at("regulatory")) : "") + " | " +
            (ok ? yes_no(row.at("estimate")) : "") + " | " + (ok ? num(row.at("standardized_difference")) : "") +
            " | " + (ok ? "" : row.at("error").get<std::string>()) + " |\n";
    }
    md += "\n";
  }
  for (const auto& sg : r.at("subgroups")) {
    md += "Subgroups by " + sg.at("covariate").get<std::string>() + " (" + sg.at("note").get<std::string>() + ")\n\n";
    md += "| Bin | n | Effect (CI) |\n|---|---|---|\n";
    for (const auto& b : sg.at("bins")) {
      md += "| " + b.at("label").get<std::string>() + " | " + text(b.at("n")) + " | " +
            (b.at("flagged").get<bool>() ? std::string("one arm empty") : with_ci(b.at("estimate"))) + " |\n";
    }
    md += "\n";
  }
  md += checklist_rows(7);

  md += "## Step 8. Interpretation\n\n";
  {
    const bool design = has_design(r);
    md += "| Estimator | TATE | PATE | Regulatory | Estimate | Standardized Difference |";
    md += design ? " Design |\n|---|---|---|---|---|---|---|\n" : "\n|---|---|---|---|---|---|\n";
    for (const auto& v : r.at("verdict")) {
      md += "| " + v.at("estimator").get<std::string>() + " | " + with_ci(v.at("tate")) + " | " + with_ci(v.at("pate")) +
            " | " + yes_no(v.at("regulatory")) + " | " + yes_no(v.at("estimate")) + " | " +
            num(v.at("standardized_difference")) + " |";
      if (design) md += " " + yes_no(v.at("design")) + " |";
      md += "\n";
    }
    md += "\n" + checklist_rows(8);
  }

  if (!r.at("warnings").empty()) {
    md += "## Warnings\n\n";
    for (const auto& w : r.at("warnings")) md += "- " + w.get<std::string>() + "\n";
    md += "\n";
  }
  return md;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << content;
  out.close();
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> emit_report(const RunReport& report, const std::vector<std::string>& formats,
                                               const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& content) {
    const auto p = dir / name;
    write_file(p, content);
    written.push_back(p);
  };
  for (const auto& f : formats) {
    if (f == "json") {
      put("report.json", canonical_dump(report.body));
    } else if (f == "markdown") {
      put("report.md", render_markdown(report.body));
    } else if (f == "svg") {
      put("ps_density.svg", render_ps_density_svg(report.body));
      put("smd.svg", render_smd_svg(report.body));
    } else if (f == "weights") {
      put("weights.csv", report.weights_csv);
    } else {
      fail(ErrorKind::Config, "unknown report format '" + f + "'");
    }
  }
  return written;
}

}  // namespace trialbridge
