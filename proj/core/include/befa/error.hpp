#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace befa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `line` is 1-based; 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data invariant (range, nesting, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Linear algebra failure (non-PD matrix, rank deficiency, non-finite value).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// An iterative algorithm hit its iteration cap.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// An MCMC chain aborted. Carries the chain id and a diagnostic dump.
class ChainError : public Error {
 public:
  ChainError(int chain, long iteration, const std::string& diagnostic)
      : Error("chain " + std::to_string(chain) + " aborted at iteration " +
              std::to_string(iteration) + ": " + diagnostic),
        chain_(chain),
        iteration_(iteration) {}
  int chain() const noexcept { return chain_; }
  long iteration() const noexcept { return iteration_; }

 private:
  int chain_;
  long iteration_;
};

}  // namespace befa
