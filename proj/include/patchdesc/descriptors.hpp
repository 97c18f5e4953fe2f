#pragma once

// Descriptor files: a flat binary data file plus a text sidecar
// "<path>.hdr":
//
//   patchdesc-descriptors 1
//   format float32        (or: format bits)
//   dim <D>               (float32: values per row; bits: bits per row)
//   count <N>
//
// float32 rows are D little-endian IEEE-754 floats; bit rows are
// ceil(D / 8) bytes, bit i of the row at byte i / 8, position i % 8 (LSB
// first). Float rows compare by L2 distance, bit rows by Hamming distance.

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "patchdesc/binary_io.hpp"
#include "patchdesc/data.hpp"
#include "patchdesc/error.hpp"
#include "patchdesc/network.hpp"
#include "patchdesc/parallel.hpp"

namespace patchdesc {

enum class DescriptorFormat { Float32, Bits };

struct DescriptorSet {
  DescriptorFormat format = DescriptorFormat::Float32;
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<float> values;       // Float32: count * dim
  std::vector<std::uint8_t> bits;  // Bits: count * row_bytes()

  std::size_t row_bytes() const { return format == DescriptorFormat::Float32 ? dim * 4 : (dim + 7) / 8; }

  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<const std::uint8_t> bit_row(std::size_t i) const { return {bits.data() + i * row_bytes(), row_bytes()}; }

  double distance(std::size_t a, std::size_t b) const {
    if (format == DescriptorFormat::Float32) return l2_distance<float>(row(a), row(b));
    const auto ra = bit_row(a), rb = bit_row(b);
    std::size_t d = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) d += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(ra[i] ^ rb[i])));
    return static_cast<double>(d);
  }

  friend bool operator==(const DescriptorSet&, const DescriptorSet&) = default;
};

inline std::string descriptor_header_path(const std::string& path) { return path + ".hdr"; }

inline void save_descriptors(const DescriptorSet& set, const std::string& path) {
  ByteWriter w;
  if (set.format == DescriptorFormat::Float32) {
    for (float v : set.values) w.f32(v);
  } else {
    w.bytes(set.bits);
  }
  write_file_bytes(path, w.buffer());
  std::ofstream hdr(descriptor_header_path(path), std::ios::trunc);
  if (!hdr) throw FormatError("cannot write descriptor header for '" + path + "'");
  hdr << "patchdesc-descriptors 1\n"
      << "format " << (set.format == DescriptorFormat::Float32 ? "float32" : "bits") << "\n"
      << "dim " << set.dim << "\n"
      << "count " << set.count << "\n";
}

inline DescriptorSet load_descriptors(const std::string& path) {
  std::ifstream hdr(descriptor_header_path(path));
  if (!hdr) throw FormatError("missing descriptor header '" + descriptor_header_path(path) + "'");
  DescriptorSet set;
  std::string key, value;
  int version = 0;
  bool have_format = false, have_dim = false, have_count = false;
  while (hdr >> key >> value) {
    if (key == "patchdesc-descriptors") {
      version = std::stoi(value);
    } else if (key == "format") {
      if (value == "float32") set.format = DescriptorFormat::Float32;
      else if (value == "bits") set.format = DescriptorFormat::Bits;
      else throw FormatError("descriptor header: unknown format '" + value + "'");
      have_format = true;
    } else if (key == "dim") {
      set.dim = std::stoull(value);
      have_dim = true;
    } else if (key == "count") {
      set.count = std::stoull(value);
      have_count = true;
    } else {
      throw FormatError("descriptor header: unknown key '" + key + "'");
    }
  }
  if (version != 1) throw FormatError("descriptor header: unsupported version");
  if (!have_format || !have_dim || !have_count || set.dim == 0) throw FormatError("descriptor header: incomplete");
  const auto bytes = read_file_bytes(path);
  if (bytes.size() != set.count * set.row_bytes())
    throw FormatError("descriptor file '" + path + "' holds " + std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(set.count * set.row_bytes()));
  if (set.format == DescriptorFormat::Float32) {
    ByteReader r(bytes, "descriptor file");
    set.values.resize(set.count * set.dim);
    for (float& v : set.values) v = r.f32();
  } else {
    set.bits = bytes;
  }
  return set;
}

/// Descriptors of every patch of a dataset (input normalization taken from
/// the network state). Each patch is computed independently, so the result
/// does not depend on the thread count.
inline DescriptorSet describe_dataset(const NetworkState<float>& state, const PatchDataset& ds, std::size_t threads = 1) {
  DescriptorSet set;
  set.format = DescriptorFormat::Float32;
  set.dim = output_dim(state.spec);
  set.count = ds.size();
  set.values.resize(set.count * set.dim);
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    const auto d = describe(state, patch_tensor<float>(ds.patches[i], state.norm));
    std::copy(d.values().begin(), d.values().end(), set.values.begin() + static_cast<std::ptrdiff_t>(i * set.dim));
  });
  return set;
}

}  // namespace patchdesc
