#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace couda {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation received operands whose shapes do not conform.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::vector<Shape> shapes, const std::string& detail = {});

  const std::string& op() const noexcept { return op_; }
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }

 private:
  std::string op_;
  std::vector<Shape> shapes_;
};

/// An input lies outside the mathematical domain of an operation
/// (log of a non-positive value, zero-norm cosine row, non-stochastic matrix...).
class DomainError : public Error {
 public:
  DomainError(std::string op, const std::string& detail);

  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Invalid configuration or arguments. Maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became non-finite. Maps to CLI exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& detail);

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace couda
