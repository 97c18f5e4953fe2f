#pragma once

// Patch datasets: mosaic directories, the raw binary format, synthetic
// generation and the validation split.
//
// Raw format (little-endian):
//   8 bytes  magic "PDPATCH\0"
//   u32      format version (1)
//   u64      patch count
//   per patch: u32 point id, 4096 pixel bytes (row-major 64x64)
//   u32      CRC-32 of all preceding bytes

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <regex>
#include <string>
#include <vector>

#include "patchdesc/binary_io.hpp"
#include "patchdesc/error.hpp"
#include "patchdesc/image_io.hpp"
#include "patchdesc/network.hpp"
#include "patchdesc/rng.hpp"
#include "patchdesc/sampler.hpp"
#include "patchdesc/tensor.hpp"

namespace patchdesc {

inline constexpr std::size_t kPatchPixels = kPatchSize * kPatchSize;
inline constexpr std::size_t kMosaicSize = 1024;
inline constexpr std::size_t kMosaicGrid = kMosaicSize / kPatchSize;  // 16
inline constexpr std::size_t kPatchesPerMosaic = kMosaicGrid * kMosaicGrid;

struct Patch {
  std::array<std::uint8_t, kPatchPixels> pixels{};
  std::uint32_t point_id = 0;
  friend bool operator==(const Patch&, const Patch&) = default;
};

struct PatchDataset {
  std::vector<Patch> patches;
  DatasetIndex index;
  std::string provenance;

  std::size_t size() const { return patches.size(); }

  std::vector<std::uint32_t> labels() const {
    std::vector<std::uint32_t> l(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i) l[i] = patches[i].point_id;
    return l;
  }

  void reindex() {
    const auto l = labels();
    index = DatasetIndex::from_labels(l);
  }
};

inline PatchDataset make_dataset(std::vector<Patch> patches, std::string provenance) {
  PatchDataset ds{std::move(patches), {}, std::move(provenance)};
  ds.reindex();
  return ds;
}

// Pixel / 255, then the dataset normalization.
template <typename T>
Tensor<T> patch_tensor(const Patch& p, const NormStats& norm = {}) {
  Tensor<T> t({1, kPatchSize, kPatchSize});
  const double inv = 1.0 / norm.std;
  for (std::size_t i = 0; i < kPatchPixels; ++i)
    t[i] = static_cast<T>((p.pixels[i] / 255.0 - norm.mean) * inv);
  return t;
}

inline PatchDataset subset(const PatchDataset& ds, std::span<const std::uint32_t> patch_indices,
                           std::string provenance) {
  std::vector<Patch> out;
  out.reserve(patch_indices.size());
  for (auto i : patch_indices) out.push_back(ds.patches.at(i));
  return make_dataset(std::move(out), std::move(provenance));
}

struct DatasetSplit {
  PatchDataset train;
  PatchDataset validation;
};

/// Holds out `validation_points` point ids: the first ones of a seeded
/// shuffle of the unique ids. Patch order is preserved within each side.
inline DatasetSplit split_validation(const PatchDataset& ds, std::size_t validation_points, std::uint64_t seed) {
  const std::size_t m = ds.index.point_count();
  if (validation_points >= m)
    throw DatasetError("validation split of " + std::to_string(validation_points) + " points leaves no training data (" +
                       std::to_string(m) + " points)");
  std::vector<std::uint32_t> slots(m);
  std::iota(slots.begin(), slots.end(), 0u);
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < m; ++i) std::swap(slots[i], slots[i + rng.below(m - i)]);
  std::vector<bool> held(m, false);
  for (std::size_t i = 0; i < validation_points; ++i) held[slots[i]] = true;
  std::vector<std::uint32_t> train_idx, val_idx;
  for (std::uint32_t p = 0; p < ds.size(); ++p) (held[ds.index.patch_point[p]] ? val_idx : train_idx).push_back(p);
  return {subset(ds, train_idx, ds.provenance + ":train"), subset(ds, val_idx, ds.provenance + ":validation")};
}

// ---------------------------------------------------------------------------
// Raw binary format
// ---------------------------------------------------------------------------

inline constexpr char kRawMagic[8] = {'P', 'D', 'P', 'A', 'T', 'C', 'H', 0};
inline constexpr std::uint32_t kRawVersion = 1;

inline std::vector<std::uint8_t> raw_bytes(const PatchDataset& ds) {
  ByteWriter w;
  w.raw(std::string_view(kRawMagic, 8));
  w.u32(kRawVersion);
  w.u64(ds.size());
  for (const auto& p : ds.patches) {
    w.u32(p.point_id);
    w.bytes(p.pixels);
  }
  w.seal();
  return w.take();
}

inline PatchDataset raw_from_bytes(std::span<const std::uint8_t> bytes, std::string provenance = "raw") {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kRawMagic, 8) != 0)
    throw FormatError("raw dataset: bad magic");
  ByteReader r(bytes, "raw dataset");
  r.take(8);
  const std::uint32_t version = r.u32();
  if (version != kRawVersion) throw FormatError("raw dataset: unsupported format version " + std::to_string(version));
  verify_crc_trailer(bytes, "raw dataset");
  const std::uint64_t count = r.u64();
  if (count > r.remaining() / (4 + kPatchPixels)) throw FormatError("raw dataset: truncated file");
  std::vector<Patch> patches(count);
  for (auto& p : patches) {
    p.point_id = r.u32();
    auto px = r.take(kPatchPixels);
    std::copy(px.begin(), px.end(), p.pixels.begin());
  }
  r.verify_seal();
  return make_dataset(std::move(patches), std::move(provenance));
}

inline void save_raw(const PatchDataset& ds, const std::string& path) { write_file_bytes(path, raw_bytes(ds)); }

inline PatchDataset load_raw(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return raw_from_bytes(bytes, std::filesystem::path(path).stem().string());
}

// ---------------------------------------------------------------------------
// Mosaic directories
// ---------------------------------------------------------------------------

/// Numbered mosaic images ("patches0000.bmp", ...; .bmp or .pgm), sorted by
/// number.
inline std::vector<std::filesystem::path> list_mosaics(const std::filesystem::path& dir) {
  static const std::regex pattern(R"(patches(\d+)\.(bmp|pgm|BMP|PGM))");
  std::vector<std::pair<unsigned long, std::filesystem::path>> found;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, m, pattern)) found.emplace_back(std::stoul(m[1]), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<std::filesystem::path> out;
  for (auto& f : found) out.push_back(f.second);
  return out;
}

// First integer of every non-empty line.
inline std::vector<std::uint32_t> read_info_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open info file '" + path.string() + "'");
  std::vector<std::uint32_t> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    std::uint32_t id = 0;
    const char* begin = line.data() + first;
    const auto [ptr, ec] = std::from_chars(begin, line.data() + line.size(), id);
    if (ec != std::errc{}) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected a point id");
    ids.push_back(id);
  }
  return ids;
}

/// Loads a directory of 1024x1024 mosaics (16x16 row-major grids of 64x64
/// patches) plus "info.txt" with one point id per patch. Filler patches past
/// the last id are dropped.
inline PatchDataset load_mosaic_dataset(const std::string& dir, std::size_t threads = 1) {
  const std::filesystem::path root(dir);
  if (!std::filesystem::is_directory(root)) throw FormatError("'" + dir + "' is not a directory");
  const auto ids = read_info_file(root / "info.txt");
  const auto mosaics = list_mosaics(root);
  if (ids.size() > mosaics.size() * kPatchesPerMosaic)
    throw FormatError("info file lists " + std::to_string(ids.size()) + " patches but " + std::to_string(mosaics.size()) +
                      " mosaic(s) hold only " + std::to_string(mosaics.size() * kPatchesPerMosaic));
  const std::size_t needed = (ids.size() + kPatchesPerMosaic - 1) / kPatchesPerMosaic;
  std::vector<Patch> patches(ids.size());

  auto load_one = [&](std::size_t m) {
    const GrayImage img = read_image(mosaics[m].string());
    if (img.width != kMosaicSize || img.height != kMosaicSize)
      throw FormatError("'" + mosaics[m].string() + "': mosaic must be 1024x1024, got " + std::to_string(img.width) +
                        "x" + std::to_string(img.height));
    for (std::size_t cell = 0; cell < kPatchesPerMosaic; ++cell) {
      const std::size_t idx = m * kPatchesPerMosaic + cell;
      if (idx >= ids.size()) break;
      const std::size_t gy = cell / kMosaicGrid, gx = cell % kMosaicGrid;
      Patch& p = patches[idx];
      p.point_id = ids[idx];
      for (std::size_t y = 0; y < kPatchSize; ++y)
        std::copy_n(img.pixels.data() + (gy * kPatchSize + y) * kMosaicSize + gx * kPatchSize, kPatchSize,
                    p.pixels.data() + y * kPatchSize);
    }
  };

  if (threads <= 1) {
    for (std::size_t m = 0; m < needed; ++m) load_one(m);
  } else {
    for (std::size_t start = 0; start < needed; start += threads) {
      std::vector<std::future<void>> jobs;
      for (std::size_t m = start; m < std::min(needed, start + threads); ++m)
        jobs.push_back(std::async(std::launch::async, load_one, m));
      for (auto& j : jobs) j.get();
    }
  }
  return make_dataset(std::move(patches), root.filename().string());
}

// Inverse of load_mosaic_dataset: writes mosaics padded with black filler
// cells and the info file ("<id> 0" per line).
inline void save_mosaic_dataset(const PatchDataset& ds, const std::string& dir, const std::string& ext = ".bmp") {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);
  const std::size_t mosaics = std::max<std::size_t>(1, (ds.size() + kPatchesPerMosaic - 1) / kPatchesPerMosaic);
  for (std::size_t m = 0; m < mosaics; ++m) {
    GrayImage img{kMosaicSize, kMosaicSize, std::vector<std::uint8_t>(kMosaicSize * kMosaicSize, 0)};
    for (std::size_t cell = 0; cell < kPatchesPerMosaic; ++cell) {
      const std::size_t idx = m * kPatchesPerMosaic + cell;
      if (idx >= ds.size()) break;
      const std::size_t gy = cell / kMosaicGrid, gx = cell % kMosaicGrid;
      for (std::size_t y = 0; y < kPatchSize; ++y)
        std::copy_n(ds.patches[idx].pixels.data() + y * kPatchSize, kPatchSize,
                    img.pixels.data() + (gy * kPatchSize + y) * kMosaicSize + gx * kPatchSize);
    }
    char name[32];
    std::snprintf(name, sizeof name, "patches%04zu", m);
    write_image((root / (std::string(name) + ext)).string(), img);
  }
  std::ofstream info(root / "info.txt");
  for (const auto& p : ds.patches) info << p.point_id << " 0\n";
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SyntheticOptions {
  std::size_t sinusoids = 5;
  std::size_t blobs = 6;
  double min_frequency = 0.01;  // sinusoid cycles per pixel
  double max_frequency = 0.04;
  double min_blob_sigma = 5.0;  // pixels
  double max_blob_sigma = 12.0;
  double max_rotation = 3.14159265358979323846 / 8;  // radians
  double max_translation = 5.0;                      // pixels, per axis
  double gain_jitter = 0.1;                          // multiplicative, +-
  double offset_jitter = 0.1;                        // additive, in texture units
  double noise = 0.2;                                // pixel noise, texture units
};

namespace detail {

struct Texture {
  struct Wave {
    double fx, fy, phase, amp;
  };
  struct Blob {
    double cx, cy, inv2s2, amp;
  };
  std::vector<Wave> waves;
  std::vector<Blob> blobs;

  double operator()(double u, double v) const {
    double t = 0;
    for (const auto& w : waves) t += w.amp * std::sin(w.fx * u + w.fy * v + w.phase);
    for (const auto& b : blobs) {
      const double du = u - b.cx, dv = v - b.cy;
      t += b.amp * std::exp(-(du * du + dv * dv) * b.inv2s2);
    }
    return t;
  }
};

inline Texture random_texture(const SyntheticOptions& opt, Rng& rng) {
  constexpr double kTwoPi = 6.283185307179586;
  Texture tex;
  for (std::size_t i = 0; i < opt.sinusoids; ++i) {
    const double freq = kTwoPi * rng.uniform(opt.min_frequency, opt.max_frequency);
    const double theta = rng.uniform(0, kTwoPi);
    tex.waves.push_back({freq * std::cos(theta), freq * std::sin(theta), rng.uniform(0, kTwoPi), rng.uniform(0.3, 1.0)});
  }
  for (std::size_t i = 0; i < opt.blobs; ++i) {
    const double s = rng.uniform(opt.min_blob_sigma, opt.max_blob_sigma);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    tex.blobs.push_back({rng.uniform(-24, 24), rng.uniform(-24, 24), 1.0 / (2 * s * s), sign * rng.uniform(0.8, 2.0)});
  }
  return tex;
}

}  // namespace detail

/// Each class is a random texture (oriented sinusoids plus Gaussian blobs);
/// each patch views it under a random rotation, translation, gain/offset and
/// pixel noise. Deterministic for a seed. Point ids are 0..classes-1 and
/// patches are grouped by class.
inline PatchDataset generate_synthetic(std::size_t classes, std::size_t per_class, std::uint64_t seed,
                                       const SyntheticOptions& opt = {}) {
  if (classes < 2) throw std::invalid_argument("generate_synthetic: need at least 2 classes");
  if (per_class < 2) throw std::invalid_argument("generate_synthetic: need at least 2 patches per class");
  Rng rng(seed);
  std::vector<Patch> patches;
  patches.reserve(classes * per_class);
  constexpr double kCenter = (kPatchSize - 1) / 2.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto tex = detail::random_texture(opt, rng);
    for (std::size_t k = 0; k < per_class; ++k) {
      const double angle = rng.uniform(-opt.max_rotation, opt.max_rotation);
      const double tx = rng.uniform(-opt.max_translation, opt.max_translation);
      const double ty = rng.uniform(-opt.max_translation, opt.max_translation);
      const double gain = 1.0 + rng.uniform(-opt.gain_jitter, opt.gain_jitter);
      const double offset = rng.uniform(-opt.offset_jitter, opt.offset_jitter);
      const double ca = std::cos(angle), sa = std::sin(angle);
      Patch p;
      p.point_id = static_cast<std::uint32_t>(c);
      for (std::size_t y = 0; y < kPatchSize; ++y)
        for (std::size_t x = 0; x < kPatchSize; ++x) {
          const double u0 = static_cast<double>(x) - kCenter, v0 = static_cast<double>(y) - kCenter;
          const double u = ca * u0 - sa * v0 + tx, v = sa * u0 + ca * v0 + ty;
          const double value = gain * tex(u, v) + offset + opt.noise * rng.normal();
          p.pixels[y * kPatchSize + x] = static_cast<std::uint8_t>(std::clamp(std::lround(128.0 + 40.0 * value), 0L, 255L));
        }
      patches.push_back(p);
    }
  }
  return make_dataset(std::move(patches), "synthetic");
}

}  // namespace patchdesc
