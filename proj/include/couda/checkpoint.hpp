#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "couda/model.hpp"

namespace couda {

/// Named dense array as stored in a checkpoint.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

// Checkpoint byte layout (all integers little-endian):
//
//   magic    8 bytes  "COUDACK1"
//   count    u32      number of arrays
//   repeated count times:
//     name_len u32, name (UTF-8, name_len bytes)
//     rank     u32, dims (rank x u64)
//     values   product(dims) x IEEE-754 binary64, little-endian
//
// Values are copied bit-for-bit, so save -> load is exact.
void write_arrays(std::ostream& out, std::span<const NamedArray> arrays);
std::vector<NamedArray> read_arrays(std::istream& in);

/// Model parameters plus an "arch" record describing the layer widths.
std::vector<NamedArray> to_arrays(const CoudaModel& model);
CoudaModel from_arrays(std::span<const NamedArray> arrays);

void save_checkpoint(const CoudaModel& model, const std::filesystem::path& path);
CoudaModel load_checkpoint(const std::filesystem::path& path);

}  // namespace couda
