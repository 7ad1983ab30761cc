#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ohnn {

// Root of every library error. Callers that only need "did it work" catch
// this; the CLI maps ConfigError to exit code 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t expected, std::size_t got)
      : Error("dimension mismatch: expected " + std::to_string(expected) +
              ", got " + std::to_string(got)) {}
};

class ZeroReflectionVector : public Error {
 public:
  ZeroReflectionVector() : Error("reflection vector norm below floor") {}
};

class ZeroVector : public Error {
 public:
  ZeroVector() : Error("zero vector has no direction") {}
};

class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(std::size_t pivot)
      : Error("matrix not positive definite at pivot " + std::to_string(pivot)),
        pivot_(pivot) {}
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

class InvalidShape : public Error {
 public:
  using Error::Error;
};

class PoolTooSmall : public Error {
 public:
  using Error::Error;
};

class EmptyPool : public Error {
 public:
  EmptyPool() : Error("pool is empty") {}
};

class DegenerateCovariance : public Error {
 public:
  using Error::Error;
};

class InvalidSpec : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(std::size_t offset, const std::string& reason)
      : Error("format error at offset " + std::to_string(offset) + ": " + reason),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class DivergenceDetected : public Error {
 public:
  explicit DivergenceDetected(std::size_t iteration)
      : Error("non-finite loss at iteration " + std::to_string(iteration)) {}
};

class InsufficientUtterances : public Error {
 public:
  explicit InsufficientUtterances(const std::string& speaker)
      : Error("insufficient utterances for speaker '" + speaker + "'"),
        speaker_(speaker) {}
  const std::string& speaker() const { return speaker_; }

 private:
  std::string speaker_;
};

class MatrixTooSmall : public Error {
 public:
  MatrixTooSmall() : Error("similarity matrix needs at least 2 speakers") {}
};

class DegenerateReference : public Error {
 public:
  DegenerateReference() : Error("reference matrix has zero diagonal dominance") {}
};

class EmptyScores : public Error {
 public:
  EmptyScores() : Error("EER needs at least one target and one non-target score") {}
};

class ZeroWeightSum : public Error {
 public:
  ZeroWeightSum() : Error("subset weights sum to zero") {}
};

class SplitMissing : public Error {
 public:
  using Error::Error;
};

// Schema or flag problems; the CLI reports these with exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ohnn
