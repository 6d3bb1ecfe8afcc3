#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace trialbridge {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

enum class CovariateKind { Continuous, Binary, Categorical };

enum class Side { Trial, Target };

/// Definition of one harmonized covariate. Binary and categorical values are
/// stored as level indices (0, 1, ...); the first declared level is the
/// reference category.
struct CovariateSchema {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  std::vector<std::string> levels;
  bool is_effect_modifier_candidate = false;
  bool in_ps_model = true;
  bool in_outcome_model = true;
  std::map<std::string, std::string> recode_map;

  bool operator==(const CovariateSchema&) const = default;
};

using Schema = std::vector<CovariateSchema>;

/// Throws a schema error when any invariant is violated.
void validate_schema(const Schema& schema);

/// Accepts either a JSON array of covariates (shared by both sides) or an
/// object {"trial": [...], "target": [...]}.
struct SchemaPair {
  Schema trial;
  Schema target;
};
SchemaPair load_schema(const std::filesystem::path& path);
SchemaPair parse_schema(const nlohmann::json& j);
nlohmann::json schema_to_json(const Schema& schema);

struct Provenance {
  std::string source;
  std::size_t rows_read = 0;
  /// Trial rows dropped because treatment or outcome was missing.
  std::size_t excluded_missing_outcome = 0;

  bool operator==(const Provenance&) const = default;
};

/// Unit-level records in column-major layout. Covariate cells use NaN as the
/// missing marker. Treatment and outcome exist only for trial units; for
/// target units they are structurally absent and hold NaN.
struct StudyTable {
  Schema schema;
  std::vector<std::string> unit_ids;
  std::vector<int> s;
  std::vector<std::vector<double>> x;  // x[covariate][unit]
  std::vector<double> t;
  std::vector<double> y;
  Provenance provenance;
  std::vector<std::string> dropped;

  std::size_t size() const { return unit_ids.size(); }
  std::size_t n_trial() const;
  std::size_t n_target() const;
  bool has_missing() const;

  /// Index into schema/x, or nullopt.
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  const std::vector<double>& column(const std::string& name) const;

  /// Rows in the given order; indices may repeat (bootstrap resamples).
  StudyTable subset(const std::vector<std::size_t>& rows) const;
  /// Rows on one side only.
  StudyTable side(Side which) const;
  /// Copy with only the named covariates, in the given order.
  StudyTable select(const std::vector<std::string>& names) const;

  bool operator==(const StudyTable&) const;
};

struct MissingnessReport {
  std::vector<std::string> variables;
  std::vector<double> fraction;            // per variable, all units
  double any_missing = 0.0;                // units with >= 1 missing cell
  std::vector<double> fraction_trial;      // per variable, s = 1
  std::vector<double> fraction_target;     // per variable, s = 0
  double any_missing_trial = 0.0;
  double any_missing_target = 0.0;
  std::size_t n = 0, n_trial = 0, n_target = 0;
};

/// Parses a CSV file. The first column is unit_id; remaining columns must be
/// exactly the schema covariates plus `t` and `y` for the trial side. Empty,
/// "NA" and "NaN" cells (case-insensitive) are missing.
StudyTable load_study(const std::filesystem::path& path, const Schema& schema, Side side);
StudyTable parse_study(const std::string& csv_text, const Schema& schema, Side side,
                       const std::string& source = "<memory>");

/// Writes the CSV format accepted by load_study. Doubles are printed with
/// round-trip precision so load(save(t)) reproduces t exactly.
std::string format_study(const StudyTable& table);
void save_study(const StudyTable& table, const std::filesystem::path& path);

struct HarmonizedPair {
  StudyTable trial;
  StudyTable target;
  std::vector<std::string> dropped;
  std::vector<std::string> warnings;
};

/// Restricts both tables to their shared covariates. Covariates present on
/// only one side are dropped with a warning. A shared covariate whose kind or
/// level set still disagrees after recoding is a harmonization error.
HarmonizedPair harmonize(const StudyTable& trial, const StudyTable& target);

MissingnessReport missingness_profile(const StudyTable& table);
nlohmann::json to_json(const MissingnessReport& report);

/// Concatenates trial then target. Unit ids are prefixed with "trial:" or
/// "target:".
StudyTable stack(const StudyTable& trial, const StudyTable& target);

CovariateKind parse_kind(const std::string& s);
std::string to_string(CovariateKind kind);

}  // namespace trialbridge
