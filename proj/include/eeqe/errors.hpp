#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eeqe {

// Base of every error raised by the library. The CLI maps any of these to a
// nonzero exit status with a single-line diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string field, std::string segment_id, const std::string& what)
      : Error(what + " (field '" + field + "', segment '" + segment_id + "')"),
        field_(std::move(field)),
        segment_id_(std::move(segment_id)) {}
  const std::string& field() const { return field_; }
  const std::string& segment_id() const { return segment_id_; }

 private:
  std::string field_;
  std::string segment_id_;
};

// A required optional field (human_score, logprob_*, partial scores) is absent.
class MissingFieldError : public Error {
 public:
  MissingFieldError(std::string field, const std::string& segment_id)
      : Error("missing field '" + field + "' on segment '" + segment_id + "'"),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(int epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace eeqe
