#pragma once

#include <stdexcept>
#include <string>

namespace aeda {

// Shape or dimension violation in a tensor op or during model assembly.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or unusable input data: parsers, cache files, configs, reports.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int epoch, int batch)
      : std::runtime_error(what), epoch(epoch), batch(batch) {}
  int epoch;
  int batch;
};

}  // namespace aeda
