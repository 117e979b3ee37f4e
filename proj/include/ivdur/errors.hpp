#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ivdur {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data. `line` is 1-based in the source file, 0 when unknown.
class DataError : public Error {
 public:
  DataError(std::size_t line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyCell : public Error {
 public:
  EmptyCell(std::size_t z, std::size_t w)
      : Error("empty cell (z=" + std::to_string(z) + ", w=" + std::to_string(w) + ")"), z_(z), w_(w) {}
  std::size_t z() const noexcept { return z_; }
  std::size_t w() const noexcept { return w_; }

 private:
  std::size_t z_, w_;
};

class EmptyInstrumentLevel : public Error {
 public:
  explicit EmptyInstrumentLevel(std::size_t w)
      : Error("instrument level " + std::to_string(w) + " has no observations"), w_(w) {}
  std::size_t w() const noexcept { return w_; }

 private:
  std::size_t w_;
};

class DegenerateSample : public Error {
 public:
  using Error::Error;
};

class InvalidBandwidth : public Error {
 public:
  using Error::Error;
};

class BootstrapDegeneracy : public Error {
 public:
  using Error::Error;
};

class TailDominates : public Error {
 public:
  using Error::Error;
};

class TriangularPrecondition : public Error {
 public:
  using Error::Error;
};

}  // namespace ivdur
