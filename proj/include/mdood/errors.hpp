#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mdood {

// Coarse failure classes. The CLI maps them onto process exit codes.
enum class ErrorCategory { kIo, kValidation, kNumeric };

int exit_code_for(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorCategory::kValidation, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorCategory::kNumeric, what) {}
};

class DimensionMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class TapMismatch : public ValidationError {
 public:
  TapMismatch(const std::string& expected, const std::string& actual)
      : ValidationError("feature tap mismatch: model was fitted on '" + expected +
                        "' but inputs carry '" + actual + "'"),
        expected_(expected),
        actual_(actual) {}
  const std::string& expected() const { return expected_; }
  const std::string& actual() const { return actual_; }

 private:
  std::string expected_;
  std::string actual_;
};

// Malformed binary input (tensor or model files). `offset` is the byte
// position in the file where the problem was detected.
class ParseError : public ValidationError {
 public:
  enum class Kind {
    kBadMagic,
    kUnknownDtype,
    kBadShape,
    kTruncatedHeader,
    kTruncatedData,
    kTrailingBytes,
    kVersionMismatch,
  };

  ParseError(Kind kind, std::uint64_t offset, const std::string& detail);

  Kind kind() const { return kind_; }
  std::uint64_t offset() const { return offset_; }
  const std::string& detail() const { return detail_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
  std::string detail_;
};

const char* to_string(ParseError::Kind kind);

}  // namespace mdood
