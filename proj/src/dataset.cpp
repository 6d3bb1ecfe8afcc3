#include "trialbridge/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "csv.hpp"
#include "trialbridge/error.hpp"

namespace trialbridge {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_missing_marker(const std::string& cell) {
  if (cell.empty()) return true;
  const std::string l = lower(cell);
  return l == "na" || l == "nan";
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) && std::isnan(b[i])) continue;
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

CovariateKind parse_kind(const std::string& s) {
  const std::string l = lower(s);
  if (l == "continuous") return CovariateKind::Continuous;
  if (l == "binary") return CovariateKind::Binary;
  if (l == "categorical") return CovariateKind::Categorical;
  fail(ErrorKind::Schema, "unknown covariate kind '" + s + "'");
}

std::string to_string(CovariateKind kind) {
  switch (kind) {
    case CovariateKind::Continuous: return "continuous";
    case CovariateKind::Binary: return "binary";
    case CovariateKind::Categorical: return "categorical";
  }
  return "?";
}

void validate_schema(const Schema& schema) {
  std::set<std::string> names;
  bool any_ps = false;
  for (const auto& c : schema) {
    if (c.name.empty()) fail(ErrorKind::Schema, "covariate with empty name");
    if (c.name == "t" || c.name == "y" || c.name == "unit_id") {
      fail(ErrorKind::Schema, "covariate name '" + c.name + "' is reserved");
    }
    if (!names.insert(c.name).second) fail(ErrorKind::Schema, "duplicate covariate '" + c.name + "'");
    if (c.kind == CovariateKind::Categorical && c.levels.empty()) {
      fail(ErrorKind::Schema, "categorical covariate '" + c.name + "' declares no levels");
    }
    if (c.kind == CovariateKind::Binary && c.levels.size() != 2) {
      fail(ErrorKind::Schema, "binary covariate '" + c.name + "' must have exactly two levels");
    }
    if (c.kind == CovariateKind::Continuous && !c.levels.empty()) {
      fail(ErrorKind::Schema, "continuous covariate '" + c.name + "' cannot declare levels");
    }
    std::set<std::string> lv;
    for (const auto& l : c.levels) {
      if (l.empty()) fail(ErrorKind::Schema, "empty level in '" + c.name + "'");
      if (!lv.insert(l).second) fail(ErrorKind::Schema, "duplicate level '" + l + "' in '" + c.name + "'");
    }
    for (const auto& [from, to] : c.recode_map) {
      if (c.kind == CovariateKind::Continuous) {
        fail(ErrorKind::Schema, "continuous covariate '" + c.name + "' cannot have a recode map");
      }
      if (!lv.count(to)) {
        fail(ErrorKind::Schema, "recode target '" + to + "' of '" + c.name + "' is not a declared level");
      }
    }
    any_ps = any_ps || c.in_ps_model;
  }
  if (!schema.empty() && !any_ps) fail(ErrorKind::Schema, "no covariate is marked for the sampling-score model");
}

namespace {

Schema parse_schema_list(const nlohmann::json& arr) {
  if (!arr.is_array()) fail(ErrorKind::Schema, "schema must be an array of covariates");
  Schema out;
  for (const auto& item : arr) {
    CovariateSchema c;
    if (!item.contains("name") || !item.contains("kind")) {
      fail(ErrorKind::Schema, "every covariate needs 'name' and 'kind'");
    }
    c.name = item.at("name").get<std::string>();
    c.kind = parse_kind(item.at("kind").get<std::string>());
    if (item.contains("levels")) c.levels = item.at("levels").get<std::vector<std::string>>();
    if (c.kind == CovariateKind::Binary && c.levels.empty()) c.levels = {"0", "1"};
    if (item.contains("roles")) {
      c.in_ps_model = c.in_outcome_model = false;
      for (const auto& r : item.at("roles")) {
        const auto role = r.get<std::string>();
        if (role == "effect_modifier") c.is_effect_modifier_candidate = true;
        else if (role == "ps_model") c.in_ps_model = true;
        else if (role == "outcome_model") c.in_outcome_model = true;
        else fail(ErrorKind::Schema, "unknown role '" + role + "' on '" + c.name + "'");
      }
    }
    if (item.contains("recode_map")) {
      for (const auto& [k, v] : item.at("recode_map").items()) c.recode_map[k] = v.get<std::string>();
    }
    out.push_back(std::move(c));
  }
  validate_schema(out);
  return out;
}

}  // namespace

SchemaPair parse_schema(const nlohmann::json& j) {
  try {
    if (j.is_array()) {
      auto s = parse_schema_list(j);
      return {s, s};
    }
    if (j.is_object() && j.contains("trial") && j.contains("target")) {
      return {parse_schema_list(j.at("trial")), parse_schema_list(j.at("target"))};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, e.what());
  }
  fail(ErrorKind::Schema, "schema must be an array or an object with 'trial' and 'target'");
}

SchemaPair load_schema(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  return parse_schema(j);
}

nlohmann::json schema_to_json(const Schema& schema) {
  auto arr = nlohmann::json::array();
  for (const auto& c : schema) {
    nlohmann::json item{{"name", c.name}, {"kind", to_string(c.kind)}};
    if (!c.levels.empty()) item["levels"] = c.levels;
    auto roles = nlohmann::json::array();
    if (c.is_effect_modifier_candidate) roles.push_back("effect_modifier");
    if (c.in_ps_model) roles.push_back("ps_model");
    if (c.in_outcome_model) roles.push_back("outcome_model");
    item["roles"] = roles;
    if (!c.recode_map.empty()) item["recode_map"] = c.recode_map;
    arr.push_back(item);
  }
  return arr;
}

// ---------------------------------------------------------------------------

std::size_t StudyTable::n_trial() const {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), 1));
}

std::size_t StudyTable::n_target() const { return size() - n_trial(); }

bool StudyTable::has_missing() const {
  for (const auto& col : x) {
    for (double v : col) {
      if (is_missing(v)) return true;
    }
  }
  return false;
}

std::optional<std::size_t> StudyTable::find(const std::string& name) const {
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (schema[j].name == name) return j;
  }
  return std::nullopt;
}

std::size_t StudyTable::index_of(const std::string& name) const {
  if (auto j = find(name)) return *j;
  fail(ErrorKind::Schema, "unknown covariate '" + name + "'");
}

const std::vector<double>& StudyTable::column(const std::string& name) const {
  return x[index_of(name)];
}

StudyTable StudyTable::subset(const std::vector<std::size_t>& rows) const {
  StudyTable out;
  out.schema = schema;
  out.provenance = provenance;
  out.dropped = dropped;
  out.x.assign(x.size(), {});
  for (auto& col : out.x) col.reserve(rows.size());
  out.unit_ids.reserve(rows.size());
  out.s.reserve(rows.size());
  out.t.reserve(rows.size());
  out.y.reserve(rows.size());
  for (std::size_t r : rows) {
    out.unit_ids.push_back(unit_ids[r]);
    out.s.push_back(s[r]);
    out.t.push_back(t[r]);
    out.y.push_back(y[r]);
    for (std::size_t j = 0; j < x.size(); ++j) out.x[j].push_back(x[j][r]);
  }
  return out;
}

StudyTable StudyTable::side(Side which) const {
  const int want = which == Side::Trial ? 1 : 0;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (s[i] == want) rows.push_back(i);
  }
  return subset(rows);
}

StudyTable StudyTable::select(const std::vector<std::string>& names) const {
  StudyTable out = *this;
  out.schema.clear();
  out.x.clear();
  for (const auto& n : names) {
    const auto j = index_of(n);
    out.schema.push_back(schema[j]);
    out.x.push_back(x[j]);
  }
  return out;
}

bool StudyTable::operator==(const StudyTable& o) const {
  if (schema != o.schema || unit_ids != o.unit_ids || s != o.s) return false;
  if (x.size() != o.x.size()) return false;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!same_bits(x[j], o.x[j])) return false;
  }
  return same_bits(t, o.t) && same_bits(y, o.y);
}

// ---------------------------------------------------------------------------

StudyTable parse_study(const std::string& csv_text, const Schema& schema, Side side,
                       const std::string& source) {
  validate_schema(schema);
  const auto rows = csv::parse(csv_text);
  if (rows.empty()) fail(ErrorKind::Schema, source + ": missing header row");
  const auto& header = rows.front();
  if (header.empty()) fail(ErrorKind::Schema, source + ": empty header");

  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string name = trim(header[c]);
    if (!col_of.emplace(name, c).second) fail(ErrorKind::Schema, source + ": duplicate column '" + name + "'");
  }
  const bool trial = side == Side::Trial;
  if (!trial && (col_of.count("t") || col_of.count("y"))) {
    fail(ErrorKind::Role, source + ": target table must not carry treatment or outcome columns (t, y)");
  }
  std::unordered_set<std::string> expected;
  for (const auto& c : schema) expected.insert(c.name);
  if (trial) {
    expected.insert("t");
    expected.insert("y");
  }
  for (const auto& name : expected) {
    if (!col_of.count(name)) fail(ErrorKind::Schema, source + ": missing column '" + name + "'");
  }
  for (const auto& [name, _] : col_of) {
    if (!expected.count(name)) fail(ErrorKind::Schema, source + ": unexpected column '" + name + "'");
  }

  StudyTable table;
  table.schema = schema;
  table.x.assign(schema.size(), {});
  table.provenance.source = source;
  std::unordered_set<std::string> seen;

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = source + " row " + std::to_string(r + 1);
    if (row.size() != header.size()) {
      fail(ErrorKind::Parse, where + ": expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(row.size()));
    }
    ++table.provenance.rows_read;
    const std::string id = trim(row[0]);
    if (id.empty()) fail(ErrorKind::Schema, where + ": empty unit_id");
    if (!seen.insert(id).second) fail(ErrorKind::Schema, where + ": duplicate unit_id '" + id + "'");

    double t = kMissing, y = kMissing;
    if (trial) {
      const std::string tc = trim(row[col_of.at("t")]);
      const std::string yc = trim(row[col_of.at("y")]);
      if (!is_missing_marker(tc)) {
        if (!parse_double(tc, t) || (t != 0.0 && t != 1.0)) {
          fail(ErrorKind::Parse, where + " column 't': treatment must be 0 or 1, got '" + tc + "'");
        }
      }
      if (!is_missing_marker(yc) && !parse_double(yc, y)) {
        fail(ErrorKind::Parse, where + " column 'y': non-numeric outcome '" + yc + "'");
      }
      if (is_missing(t) || is_missing(y)) {
        ++table.provenance.excluded_missing_outcome;
        continue;
      }
    }

    std::vector<double> values(schema.size(), kMissing);
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const auto& cov = schema[j];
      std::string cell = trim(row[col_of.at(cov.name)]);
      if (is_missing_marker(cell)) continue;
      if (auto it = cov.recode_map.find(cell); it != cov.recode_map.end()) cell = it->second;
      if (cov.kind == CovariateKind::Continuous) {
        if (!parse_double(cell, values[j])) {
          fail(ErrorKind::Parse, where + " column '" + cov.name + "': non-numeric value '" + cell + "'");
        }
      } else {
        const auto it = std::find(cov.levels.begin(), cov.levels.end(), cell);
        if (it == cov.levels.end()) {
          fail(ErrorKind::Schema, where + " column '" + cov.name + "': unknown level '" + cell + "'");
        }
        values[j] = static_cast<double>(it - cov.levels.begin());
      }
    }
    table.unit_ids.push_back(id);
    table.s.push_back(trial ? 1 : 0);
    table.t.push_back(t);
    table.y.push_back(y);
    for (std::size_t j = 0; j < schema.size(); ++j) table.x[j].push_back(values[j]);
  }
  return table;
}

StudyTable load_study(const std::filesystem::path& path, const Schema& schema, Side side) {
  return parse_study(read_file(path), schema, side, path.string());
}

std::string format_study(const StudyTable& table) {
  const bool has_trial = table.n_trial() > 0;
  if (has_trial && table.n_target() > 0) {
    fail(ErrorKind::Schema, "format_study expects a single-side table; unstack first");
  }
  std::string out = "unit_id";
  for (const auto& c : table.schema) out += "," + csv::escape(c.name);
  if (has_trial) out += ",t,y";
  out += "\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    out += csv::escape(table.unit_ids[i]);
    for (std::size_t j = 0; j < table.schema.size(); ++j) {
      out += ",";
      const double v = table.x[j][i];
      if (is_missing(v)) {
        out += "NA";
      } else if (table.schema[j].kind == CovariateKind::Continuous) {
        out += format_double(v);
      } else {
        out += csv::escape(table.schema[j].levels.at(static_cast<std::size_t>(v)));
      }
    }
    if (has_trial) out += "," + format_double(table.t[i]) + "," + format_double(table.y[i]);
    out += "\n";
  }
  return out;
}

void save_study(const StudyTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << format_study(table);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------

HarmonizedPair harmonize(const StudyTable& trial, const StudyTable& target) {
  HarmonizedPair out;
  std::vector<std::string> shared;
  for (const auto& c : trial.schema) {
    if (target.find(c.name)) {
      shared.push_back(c.name);
    } else {
      out.dropped.push_back(c.name);
      out.warnings.push_back("covariate '" + c.name + "' is present only in the trial table; dropped");
    }
  }
  for (const auto& c : target.schema) {
    if (!trial.find(c.name)) {
      out.dropped.push_back(c.name);
      out.warnings.push_back("covariate '" + c.name + "' is present only in the target table; dropped");
    }
  }

  out.trial = trial.select(shared);
  out.target = target.select(shared);
  bool any_ps = false;
  for (std::size_t j = 0; j < shared.size(); ++j) {
    const auto& a = out.trial.schema[j];
    auto& b = out.target.schema[j];
    if (a.kind != b.kind) {
      fail(ErrorKind::Harmonization, "covariate '" + a.name + "' is " + to_string(a.kind) + " in the trial but " +
                                         to_string(b.kind) + " in the target; no recode path");
    }
    if (a.levels != b.levels) {
      const std::set<std::string> la(a.levels.begin(), a.levels.end());
      const std::set<std::string> lb(b.levels.begin(), b.levels.end());
      if (la != lb) {
        fail(ErrorKind::Harmonization,
             "covariate '" + a.name + "' has different level sets in trial and target; declare a recode_map");
      }
      // Same levels, different order: re-index target cells onto trial order.
      std::vector<double> remap(b.levels.size());
      for (std::size_t k = 0; k < b.levels.size(); ++k) {
        remap[k] = static_cast<double>(std::find(a.levels.begin(), a.levels.end(), b.levels[k]) - a.levels.begin());
      }
      for (double& v : out.target.x[j]) {
        if (!is_missing(v)) v = remap[static_cast<std::size_t>(v)];
      }
    }
    b = a;
    any_ps = any_ps || a.in_ps_model;
  }
  if (!any_ps) {
    fail(ErrorKind::Harmonization, "no sampling-score covariate is shared by the trial and target tables");
  }
  out.trial.dropped = out.dropped;
  out.target.dropped = out.dropped;
  return out;
}

MissingnessReport missingness_profile(const StudyTable& table) {
  MissingnessReport r;
  r.n = table.size();
  r.n_trial = table.n_trial();
  r.n_target = table.n_target();
  const std::size_t p = table.schema.size();
  std::vector<std::size_t> miss(p, 0), miss_trial(p, 0), miss_target(p, 0);
  std::size_t any = 0, any_trial = 0, any_target = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    bool row_missing = false;
    for (std::size_t j = 0; j < p; ++j) {
      if (!is_missing(table.x[j][i])) continue;
      row_missing = true;
      ++miss[j];
      ++(table.s[i] == 1 ? miss_trial[j] : miss_target[j]);
    }
    if (row_missing) {
      ++any;
      ++(table.s[i] == 1 ? any_trial : any_target);
    }
  }
  auto frac = [](std::size_t k, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n); };
  for (std::size_t j = 0; j < p; ++j) {
    r.variables.push_back(table.schema[j].name);
    r.fraction.push_back(frac(miss[j], r.n));
    r.fraction_trial.push_back(frac(miss_trial[j], r.n_trial));
    r.fraction_target.push_back(frac(miss_target[j], r.n_target));
  }
  r.any_missing = frac(any, r.n);
  r.any_missing_trial = frac(any_trial, r.n_trial);
  r.any_missing_target = frac(any_target, r.n_target);
  return r;
}

nlohmann::json to_json(const MissingnessReport& r) {
  nlohmann::json vars = nlohmann::json::object();
  for (std::size_t j = 0; j < r.variables.size(); ++j) {
    vars[r.variables[j]] = {{"all", r.fraction[j]}, {"trial", r.fraction_trial[j]}, {"target", r.fraction_target[j]}};
  }
  return {{"variables", vars},
          {"any_missing", {{"all", r.any_missing}, {"trial", r.any_missing_trial}, {"target", r.any_missing_target}}},
          {"n", r.n},
          {"n_trial", r.n_trial},
          {"n_target", r.n_target}};
}

StudyTable stack(const StudyTable& trial, const StudyTable& target) {
  if (trial.schema != target.schema) fail(ErrorKind::Schema, "cannot stack tables with different schemas; harmonize first");
  if (trial.size() == 0) fail(ErrorKind::Schema, "trial table is empty");
  if (target.size() == 0) fail(ErrorKind::Schema, "target table is empty");
  if (trial.n_target() != 0 || target.n_trial() != 0) fail(ErrorKind::Role, "stack expects one trial and one target table");

  StudyTable out;
  out.schema = trial.schema;
  out.dropped = trial.dropped;
  out.provenance.source = trial.provenance.source + " + " + target.provenance.source;
  out.provenance.rows_read = trial.provenance.rows_read + target.provenance.rows_read;
  out.provenance.excluded_missing_outcome = trial.provenance.excluded_missing_outcome;
  out.x.assign(trial.x.size(), {});
  for (const auto* part : {&trial, &target}) {
    const std::string prefix = part == &trial ? "trial:" : "target:";
    for (std::size_t i = 0; i < part->size(); ++i) {
      out.unit_ids.push_back(prefix + part->unit_ids[i]);
      out.s.push_back(part->s[i]);
      out.t.push_back(part->t[i]);
      out.y.push_back(part->y[i]);
    }
    for (std::size_t j = 0; j < part->x.size(); ++j) {
      out.x[j].insert(out.x[j].end(), part->x[j].begin(), part->x[j].end());
    }
  }
  return out;
}

}  // namespace trialbridge
