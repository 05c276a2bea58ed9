#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ilog {

/// Base of every domain error. code() is a stable machine-readable identifier
/// that the service reuses in its JSON problem records.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& what) : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

#define ILOG_DEFINE_ERROR(Name, Code)                                                   \
  class Name : public Error {                                                          \
  public:                                                                              \
    explicit Name(const std::string& what) : Error(Code, what) {}                      \
  }

// context
ILOG_DEFINE_ERROR(OverlapError, "overlap");
ILOG_DEFINE_ERROR(OrderError, "order");
ILOG_DEFINE_ERROR(DanglingEdgeError, "dangling_edge");

// ilogcal
class SyntaxError : public Error {
public:
  SyntaxError(std::size_t line, const std::string& reason)
      : Error("syntax", "line " + std::to_string(line) + ": " + reason), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class ValidationError : public Error {
public:
  ValidationError(std::string path, const std::string& reason, std::string code = "validation")
      : Error(std::move(code), path + ": " + reason), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

class DuplicateIdError : public ValidationError {
public:
  DuplicateIdError(std::string path, const std::string& reason)
      : ValidationError(std::move(path), reason, "duplicate_id") {}
};

// schedule
ILOG_DEFINE_ERROR(OverflowError, "overflow");
ILOG_DEFINE_ERROR(ImmutablePast, "immutable_past");

class PolicyViolation : public Error {
public:
  PolicyViolation(std::string actor, std::string limit, const std::string& detail)
      : Error("policy_violation", actor + " exceeded " + limit + ": " + detail),
        actor_(std::move(actor)), limit_(std::move(limit)) {}
  const std::string& actor() const noexcept { return actor_; }
  const std::string& limit() const noexcept { return limit_; }

private:
  std::string actor_, limit_;
};

// sim
ILOG_DEFINE_ERROR(CoverageError, "coverage");
ILOG_DEFINE_ERROR(LifecycleError, "lifecycle");

// predictor
ILOG_DEFINE_ERROR(DegenerateData, "degenerate_data");

// service
ILOG_DEFINE_ERROR(AuthorizationError, "unauthorized");
ILOG_DEFINE_ERROR(NotFound, "not_found");
ILOG_DEFINE_ERROR(SchemaError, "schema");
ILOG_DEFINE_ERROR(RoleMismatch, "role_mismatch");

#undef ILOG_DEFINE_ERROR

} // namespace ilog
