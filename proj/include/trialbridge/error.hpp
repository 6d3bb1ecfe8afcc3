#pragma once

#include <stdexcept>
#include <string>

namespace trialbridge {

enum class ErrorKind {
  Schema,
  Role,
  Parse,
  Harmonization,
  Io,
  Config,
  Model,
  Estimation,
  Imputation,
};

/// Base exception for every analysis failure raised by the library.
/// The kind drives the CLI exit code (Io maps to 2, everything else to 1).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Schema: return "schema error";
    case ErrorKind::Role: return "role error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Harmonization: return "harmonization error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Model: return "model error";
    case ErrorKind::Estimation: return "estimation error";
    case ErrorKind::Imputation: return "imputation error";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, std::string(to_string(kind)) + ": " + msg);
}

}  // namespace trialbridge
