#include <fstream>
#include <set>
#include <sstream>

#include "trialbridge/error.hpp"
#include "trialbridge/pipeline.hpp"

namespace trialbridge {

std::string to_string(MissingStrategy s) {
  switch (s) {
    case MissingStrategy::PsiWithin: return "psi_within";
    case MissingStrategy::PsiAcross: return "psi_across";
    case MissingStrategy::CompleteCase: return "complete_case";
  }
  return "?";
}

namespace {

using nlohmann::json;

const std::set<std::string> kTopLevel{"schema_version", "paths",     "scenario",     "ps_model",  "outcome_model",
                                      "estimators",     "weighting", "bootstrap",    "similarity", "subgroups",
                                      "agreement",      "missing_data", "sensitivity", "checklist", "seed",
                                      "formats"};
const std::set<std::string> kFormats{"json", "markdown", "svg", "weights"};
const std::set<std::string> kStrategies{"psi_within", "psi_across", "complete_case"};

class Checker {
 public:
  std::vector<std::string> errors;

  void add(const std::string& msg) { errors.push_back(msg); }

  const json* field(const json& obj, const std::string& key, const std::string& where, bool required) {
    if (!obj.is_object()) return nullptr;
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) add(where + key + ": required field is missing");
      return nullptr;
    }
    return &*it;
  }

  void string_in(const json* v, const std::string& name, const std::set<std::string>& allowed) {
    if (!v) return;
    if (!v->is_string()) {
      add(name + ": expected a string");
      return;
    }
    if (!allowed.count(v->get<std::string>())) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      add(name + ": '" + v->get<std::string>() + "' is not one of {" + list + "}");
    }
  }

  void string_list(const json* v, const std::string& name) {
    if (!v) return;
    if (!v->is_array()) {
      add(name + ": expected an array of strings");
      return;
    }
    for (const auto& e : *v) {
      if (!e.is_string()) {
        add(name + ": expected an array of strings");
        return;
      }
    }
  }

  void number(const json* v, const std::string& name, double lo, double hi) {
    if (!v) return;
    if (!v->is_number()) {
      add(name + ": expected a number");
      return;
    }
    const double d = v->get<double>();
    if (!(d >= lo && d <= hi)) add(name + ": value " + std::to_string(d) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }

  void integer(const json* v, const std::string& name, long long lo) {
    if (!v) return;
    if (!v->is_number_integer()) {
      add(name + ": expected an integer");
      return;
    }
    if (v->get<long long>() < lo) add(name + ": must be at least " + std::to_string(lo));
  }

  void boolean(const json* v, const std::string& name) {
    if (v && !v->is_boolean()) add(name + ": expected true or false");
  }

  void object(const json* v, const std::string& name, const std::set<std::string>& keys) {
    if (!v) return;
    if (!v->is_object()) {
      add(name + ": expected an object");
      return;
    }
    for (const auto& [k, _] : v->items()) {
      if (!keys.count(k)) add(name + "." + k + ": unknown field");
    }
  }
};

void check_policy(Checker& c, const json& p, const std::string& name) {
  if (!p.is_array()) {
    c.add(name + ": expected an array of steps");
    return;
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    const std::string at = name + "[" + std::to_string(k) + "]";
    const auto& s = p[k];
    if (!s.is_object() || !s.contains("type")) {
      c.add(at + ": each step needs a type (cap or normalize)");
      continue;
    }
    c.string_in(&s["type"], at + ".type", {"cap", "normalize"});
    if (s["type"] == "cap") {
      c.number(c.field(s, "p_lo", at + ".", false), at + ".p_lo", 0.0, 100.0);
      c.number(c.field(s, "p_hi", at + ".", false), at + ".p_hi", 0.0, 100.0);
      if (s.value("p_lo", 0.0) >= s.value("p_hi", 100.0)) c.add(at + ": p_lo must be below p_hi");
    }
  }
}

void check_scenario(Checker& c, const json& s, const std::string& at) {
  if (!s.is_object() || !s.contains("type") || !s["type"].is_string()) {
    c.add(at + ": each scenario needs a type");
    return;
  }
  const std::string type = s["type"];
  if (type == "unmeasured_modifier") {
    c.number(c.field(s, "delta_u", at + ".", true), at + ".delta_u", -1e300, 1e300);
    c.number(c.field(s, "prev_trial", at + ".", true), at + ".prev_trial", 0.0, 1.0);
    c.number(c.field(s, "prev_target", at + ".", true), at + ".prev_target", 0.0, 1.0);
  } else if (type == "drop_covariates") {
    c.string_list(c.field(s, "names", at + ".", true), at + ".names");
  } else if (type == "trimming") {
    if (const json* p = c.field(s, "policy", at + ".", true)) check_policy(c, *p, at + ".policy");
  } else if (type == "alternate_estimator") {
    c.string_in(c.field(s, "method", at + ".", true), at + ".method", {"ipsw", "gcomp", "dr"});
  } else if (type == "outcome_cutoff") {
    c.number(c.field(s, "cutoff", at + ".", true), at + ".cutoff", -1e300, 1e300);
  } else if (type != "complete_case") {
    c.add(at + ".type: unknown scenario type '" + type + "'");
  }
}

}  // namespace

std::vector<std::string> validate_config(const json& j) {
  Checker c;
  if (!j.is_object()) {
    c.add("config must be a JSON object");
    return c.errors;
  }
  for (const auto& [k, _] : j.items()) {
    if (!kTopLevel.count(k)) c.add(k + ": unknown field");
  }

  if (const json* v = c.field(j, "schema_version", "", true)) {
    if (!v->is_number_integer() || v->get<int>() != kSchemaVersion) {
      c.add("schema_version: expected " + std::to_string(kSchemaVersion));
    }
  }
  if (const json* v = c.field(j, "seed", "", true)) {
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      c.add("seed: expected a non-negative integer");
    }
  }

  const json* paths = c.field(j, "paths", "", true);
  c.object(paths, "paths", {"trial", "target", "schema", "output_dir"});
  if (paths && paths->is_object()) {
    for (const char* k : {"trial", "target", "schema", "output_dir"}) {
      const json* p = c.field(*paths, k, "paths.", true);
      if (p && !p->is_string()) c.add(std::string("paths.") + k + ": expected a string");
    }
  }

  c.string_in(c.field(j, "scenario", "", false), "scenario", {"generalizability", "transportability"});

  const json* ps = c.field(j, "ps_model", "", false);
  c.object(ps, "ps_model", {"family", "covariates", "forest"});
  if (ps && ps->is_object()) {
    c.string_in(c.field(*ps, "family", "ps_model.", false), "ps_model.family", {"logistic", "forest"});
    c.string_list(c.field(*ps, "covariates", "ps_model.", false), "ps_model.covariates");
    const json* f = c.field(*ps, "forest", "ps_model.", false);
    c.object(f, "ps_model.forest", {"n_trees", "max_depth", "min_leaf", "mtry"});
    if (f && f->is_object()) {
      c.integer(c.field(*f, "n_trees", "", false), "ps_model.forest.n_trees", 1);
      c.integer(c.field(*f, "max_depth", "", false), "ps_model.forest.max_depth", -1);
      c.integer(c.field(*f, "min_leaf", "", false), "ps_model.forest.min_leaf", 1);
      c.integer(c.field(*f, "mtry", "", false), "ps_model.forest.mtry", 0);
    }
  }

  const json* om = c.field(j, "outcome_model", "", false);
  c.object(om, "outcome_model", {"type", "covariates", "saturated", "e_trial"});
  if (om && om->is_object()) {
    c.string_in(c.field(*om, "type", "", false), "outcome_model.type", {"continuous", "binary"});
    c.string_list(c.field(*om, "covariates", "", false), "outcome_model.covariates");
    c.boolean(c.field(*om, "saturated", "", false), "outcome_model.saturated");
    if (const json* e = c.field(*om, "e_trial", "", false)) {
      if (!e->is_number() || !(e->get<double>() > 0.0 && e->get<double>() < 1.0)) {
        c.add("outcome_model.e_trial: expected a probability in (0, 1)");
      }
    }
  }

  if (const json* est = c.field(j, "estimators", "", true)) {
    if (!est->is_array() || est->empty()) {
      c.add("estimators: expected a non-empty array");
    } else {
      for (std::size_t k = 0; k < est->size(); ++k) {
        const std::string at = "estimators[" + std::to_string(k) + "]";
        const auto& e = (*est)[k];
        if (!e.is_object()) {
          c.add(at + ": expected an object");
          continue;
        }
        c.object(&e, at, {"method", "variance"});
        const json* m = c.field(e, "method", at + ".", true);
        c.string_in(m, at + ".method", {"ipsw", "gcomp", "dr"});
        const json* v = c.field(e, "variance", at + ".", false);
        c.string_in(v, at + ".variance", {"sandwich", "bootstrap"});
        const std::string method = m && m->is_string() ? m->get<std::string>() : "";
        const std::string var = v && v->is_string() ? v->get<std::string>() : (method == "ipsw" ? "sandwich" : "bootstrap");
        if (var == "sandwich" && (method == "gcomp" || method == "dr")) {
          c.add(at + ": sandwich variance is not available for " + method + "; use bootstrap");
        }
      }
    }
  }

  if (const json* w = c.field(j, "weighting", "", false)) check_policy(c, *w, "weighting");

  const json* boot = c.field(j, "bootstrap", "", false);
  c.object(boot, "bootstrap", {"replicates", "flavor"});
  if (boot && boot->is_object()) {
    c.integer(c.field(*boot, "replicates", "", false), "bootstrap.replicates", 50);
    c.string_in(c.field(*boot, "flavor", "", false), "bootstrap.flavor", {"percentile", "normal"});
  }

  const json* sim = c.field(j, "similarity", "", false);
  c.object(sim, "similarity", {"smd_threshold", "delta_p_gate", "modifiers"});
  if (sim && sim->is_object()) {
    c.number(c.field(*sim, "smd_threshold", "", false), "similarity.smd_threshold", 0.0, 1e300);
    c.number(c.field(*sim, "delta_p_gate", "", false), "similarity.delta_p_gate", 0.0, 1e300);
    c.string_list(c.field(*sim, "modifiers", "", false), "similarity.modifiers");
  }
  c.string_list(c.field(j, "subgroups", "", false), "subgroups");

  const json* ag = c.field(j, "agreement", "", false);
  c.object(ag, "agreement", {"alpha", "design_threshold"});
  if (ag && ag->is_object()) {
    c.number(c.field(*ag, "alpha", "", false), "agreement.alpha", 1e-6, 0.5);
    const json* d = c.field(*ag, "design_threshold", "", false);
    c.object(d, "agreement.design_threshold", {"direction", "magnitude"});
    if (d && d->is_object()) {
      c.string_in(c.field(*d, "direction", "agreement.design_threshold.", true), "agreement.design_threshold.direction",
                  {"increase", "decrease"});
      c.number(c.field(*d, "magnitude", "agreement.design_threshold.", true), "agreement.design_threshold.magnitude",
               0.0, 1e300);
    }
  }

  if (const json* md = c.field(j, "missing_data", "", false)) {
    if (!md->is_object()) {
      c.add("missing_data: expected an object with exactly one strategy key");
    } else {
      if (md->size() != 1) {
        c.add("missing_data: exactly one strategy must be set (found " + std::to_string(md->size()) + ")");
      }
      for (const auto& [k, v] : md->items()) {
        if (!kStrategies.count(k)) {
          c.add("missing_data." + k + ": unknown strategy");
          continue;
        }
        const std::string at = "missing_data." + k;
        c.object(&v, at, {"m", "iterations", "pmm_k", "min_observed", "methods", "bootstrap"});
        if (!v.is_object()) continue;
        c.integer(c.field(v, "m", "", false), at + ".m", 1);
        c.integer(c.field(v, "iterations", "", false), at + ".iterations", 1);
        c.integer(c.field(v, "pmm_k", "", false), at + ".pmm_k", 1);
        c.integer(c.field(v, "min_observed", "", false), at + ".min_observed", 1);
        c.boolean(c.field(v, "bootstrap", "", false), at + ".bootstrap");
        if (const json* m = c.field(v, "methods", "", false)) {
          if (!m->is_object()) {
            c.add(at + ".methods: expected an object");
          } else {
            for (const auto& [name, meth] : m->items()) {
              c.string_in(&meth, at + ".methods." + name, {"pmm", "logistic", "polytomous"});
            }
          }
        }
      }
    }
  }

  if (const json* s = c.field(j, "sensitivity", "", false)) {
    if (!s->is_array()) {
      c.add("sensitivity: expected an array");
    } else {
      for (std::size_t k = 0; k < s->size(); ++k) check_scenario(c, (*s)[k], "sensitivity[" + std::to_string(k) + "]");
    }
  }

  if (const json* ck = c.field(j, "checklist", "", false)) {
    if (!ck->is_object()) {
      c.add("checklist: expected an object of item -> true/false");
    } else {
      for (const auto& [k, v] : ck->items()) c.boolean(&v, "checklist." + k);
    }
  }

  if (const json* f = c.field(j, "formats", "", false)) {
    if (!f->is_array()) {
      c.add("formats: expected an array");
    } else {
      for (std::size_t k = 0; k < f->size(); ++k) c.string_in(&(*f)[k], "formats[" + std::to_string(k) + "]", kFormats);
    }
  }
  return c.errors;
}

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Config, path.string() + ": invalid JSON: " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return path;
  return base / path;
}

ImputeMethod parse_impute_method(const std::string& s) {
  if (s == "pmm") return ImputeMethod::Pmm;
  if (s == "logistic") return ImputeMethod::Logistic;
  return ImputeMethod::Polytomous;
}

}  // namespace

std::vector<std::string> validate_config_file(const std::filesystem::path& path) {
  return validate_config(read_json(path));
}

PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  const auto errors = validate_config(j);
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " problem(s) in config:";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorKind::Config, msg);
  }

  PipelineConfig c;
  c.echo = j;
  const auto& paths = j.at("paths");
  c.trial_csv = resolve(base_dir, paths.at("trial"));
  c.target_csv = resolve(base_dir, paths.at("target"));
  c.schema_json = resolve(base_dir, paths.at("schema"));
  c.output_dir = resolve(base_dir, paths.at("output_dir"));
  c.scenario = parse_scenario(j.value("scenario", std::string("transportability")));
  c.seed = j.at("seed").get<std::uint64_t>();

  if (j.contains("ps_model")) {
    const auto& ps = j["ps_model"];
    c.ps_family = parse_family(ps.value("family", std::string("logistic")));
    if (ps.contains("covariates")) c.ps_covariates = ps["covariates"].get<std::vector<std::string>>();
    if (ps.contains("forest")) {
      const auto& f = ps["forest"];
      c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
      c.forest.max_depth = f.value("max_depth", c.forest.max_depth);
      c.forest.min_leaf = f.value("min_leaf", c.forest.min_leaf);
      c.forest.mtry = f.value("mtry", c.forest.mtry);
    }
  }

  if (j.contains("outcome_model")) {
    const auto& om = j["outcome_model"];
    c.outcome_type = om.value("type", std::string("continuous")) == "binary" ? OutcomeType::Binary
                                                                            : OutcomeType::Continuous;
    if (om.contains("covariates")) c.outcome_covariates = om["covariates"].get<std::vector<std::string>>();
    c.outcome_saturated = om.value("saturated", false);
    if (om.contains("e_trial")) c.e_trial = om["e_trial"].get<double>();
  }

  for (const auto& e : j.at("estimators")) {
    EstimatorRequest r;
    r.method = parse_method(e.at("method").get<std::string>());
    const std::string var = e.value("variance", std::string(r.method == Method::Ipsw ? "sandwich" : "bootstrap"));
    r.variance = var == "sandwich" ? VarianceKind::Sandwich : VarianceKind::Bootstrap;
    c.estimators.push_back(r);
  }

  if (j.contains("weighting")) c.policy = weight_policy_from_json(j["weighting"]);
  if (j.contains("bootstrap")) {
    c.bootstrap_replicates = j["bootstrap"].value("replicates", c.bootstrap_replicates);
    c.flavor = parse_flavor(j["bootstrap"].value("flavor", std::string("percentile")));
  }
  if (j.contains("similarity")) {
    const auto& s = j["similarity"];
    c.smd_threshold = s.value("smd_threshold", c.smd_threshold);
    if (s.contains("delta_p_gate")) c.delta_p_gate = s["delta_p_gate"].get<double>();
    if (s.contains("modifiers")) c.modifiers = s["modifiers"].get<std::vector<std::string>>();
  }
  if (j.contains("subgroups")) c.subgroups = j["subgroups"].get<std::vector<std::string>>();
  if (j.contains("agreement")) {
    const auto& a = j["agreement"];
    c.alpha = a.value("alpha", c.alpha);
    if (a.contains("design_threshold")) {
      const auto& d = a["design_threshold"];
      c.design = DesignThreshold{d.at("direction") == "increase" ? Direction::Increase : Direction::Decrease,
                                 d.at("magnitude").get<double>()};
    }
  }

  c.mice.seed = derive_seed(c.seed, "mice");
  if (j.contains("missing_data")) {
    const auto& [key, v] = *j["missing_data"].items().begin();
    c.missing = key == "psi_within"   ? MissingStrategy::PsiWithin
                : key == "psi_across" ? MissingStrategy::PsiAcross
                                      : MissingStrategy::CompleteCase;
    if (v.is_object()) {
      c.mice.m = v.value("m", c.mice.m);
      c.mice.iterations = v.value("iterations", c.mice.iterations);
      c.mice.pmm_k = v.value("pmm_k", c.mice.pmm_k);
      c.mice.min_observed = v.value("min_observed", c.mice.min_observed);
      c.mi_bootstrap = v.value("bootstrap", false);
      if (v.contains("methods")) {
        for (const auto& [name, m] : v["methods"].items()) c.mice.methods[name] = parse_impute_method(m.get<std::string>());
      }
    }
  }

  if (j.contains("sensitivity")) {
    for (const auto& s : j["sensitivity"]) c.sensitivity.push_back(scenario_from_json(s));
  }
  if (j.contains("checklist")) {
    for (const auto& [k, v] : j["checklist"].items()) c.checklist[k] = v.get<bool>();
  }
  if (j.contains("formats")) c.formats = j["formats"].get<std::vector<std::string>>();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_json(path), path.parent_path());
}

}  // namespace trialbridge
