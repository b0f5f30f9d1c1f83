#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace epcfusion {

enum class ErrorKind {
  DegenerateGeometry,
  DuplicateKey,
  OutOfRange,
  EmptyInput,
  DegenerateTarget,
  ShapeError,
  MissingModality,
  InvalidConfig,
  TrainingDiverged,
  MissingFile,
  SchemaMismatch,
  Internal,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorKind::DuplicateKey: return "DuplicateKey";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::DegenerateTarget: return "DegenerateTarget";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::MissingModality: return "MissingModality";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::Internal: return "Internal";
  }
  return "Internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace epcfusion
