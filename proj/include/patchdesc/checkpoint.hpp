#pragma once

// Checkpoint container (all integers and floats little-endian):
//
//   8 bytes   magic "PDCKPT\0\0"
//   u32       format version (1)
//   spec      str name, u32 stage count, per stage u32 filters/kernel/pool/
//             fan_in (resolved), u32 fc_outputs, u8 unit, u8 normalize,
//             u8 pooling, f64 norm_sigma, u32 input_size
//   u64 seed, u64 iteration, f64 input mean, f64 input std
//   per conv layer: u32 fan_in, u32 connection table [n_out][fan_in],
//                   f32 weights, f32 bias
//   per fc layer:   f32 weights, f32 bias
//   u32       CRC-32 of all preceding bytes

#include <string>
#include <vector>

#include "patchdesc/binary_io.hpp"
#include "patchdesc/network.hpp"

namespace patchdesc {

inline constexpr char kCheckpointMagic[8] = {'P', 'D', 'C', 'K', 'P', 'T', 0, 0};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_spec(ByteWriter& w, const NetworkSpec& spec) {
  w.str(spec.name);
  w.u32(static_cast<std::uint32_t>(spec.conv.size()));
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const auto& s = spec.conv[i];
    w.u32(static_cast<std::uint32_t>(s.filters));
    w.u32(static_cast<std::uint32_t>(s.kernel));
    w.u32(static_cast<std::uint32_t>(s.pool));
    w.u32(static_cast<std::uint32_t>(s.fan_in));
  }
  w.u32(static_cast<std::uint32_t>(spec.fc_outputs));
  w.u8(static_cast<std::uint8_t>(spec.unit));
  w.u8(spec.normalize ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(spec.pooling));
  w.f64(spec.norm_sigma);
  w.u32(static_cast<std::uint32_t>(spec.input_size));
}

inline NetworkSpec read_spec(ByteReader& r) {
  NetworkSpec spec;
  spec.name = r.str(256);
  const std::uint32_t stages = r.u32();
  if (stages == 0 || stages > 16) throw FormatError("checkpoint: implausible stage count");
  for (std::uint32_t i = 0; i < stages; ++i) {
    ConvStageSpec s;
    s.filters = r.u32();
    s.kernel = r.u32();
    s.pool = r.u32();
    s.fan_in = r.u32();
    spec.conv.push_back(s);
  }
  spec.fc_outputs = r.u32();
  const auto unit = r.u8(), normalize = r.u8(), pooling = r.u8();
  if (unit > 1 || normalize > 1 || pooling > 1) throw FormatError("checkpoint: bad enum value in spec");
  spec.unit = static_cast<Unit>(unit);
  spec.normalize = normalize == 1;
  spec.pooling = static_cast<PoolMode>(pooling);
  spec.norm_sigma = r.f64();
  spec.input_size = r.u32();
  try {
    validate_spec(spec);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: invalid network spec: ") + e.what());
  }
  return spec;
}

inline void write_floats(ByteWriter& w, const Tensor<float>& t) {
  for (float v : t.values()) w.f32(v);
}

inline void read_floats(ByteReader& r, Tensor<float>& t) {
  for (float& v : t.values()) v = r.f32();
}

}  // namespace detail

// Fan-ins are stored resolved so a reload never depends on defaults.
inline NetworkSpec resolved_spec(const NetworkSpec& spec) {
  NetworkSpec s = spec;
  for (std::size_t i = 1; i < s.conv.size(); ++i) s.conv[i].fan_in = resolved_fan_in(spec, i);
  return s;
}

inline std::vector<std::uint8_t> checkpoint_bytes(const NetworkState<float>& state) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 8));
  w.u32(kCheckpointVersion);
  detail::write_spec(w, resolved_spec(state.spec));
  w.u64(state.seed);
  w.u64(state.iteration);
  w.f64(state.norm.mean);
  w.f64(state.norm.std);
  for (const auto& l : state.layers) {
    if (const auto* c = std::get_if<ConvLayer<float>>(&l)) {
      w.u32(static_cast<std::uint32_t>(c->fan_in()));
      for (const auto& row : c->connections)
        for (auto idx : row) w.u32(idx);
      detail::write_floats(w, c->weights);
      detail::write_floats(w, c->bias);
    } else if (const auto* f = std::get_if<FcLayer<float>>(&l)) {
      detail::write_floats(w, f->weights);
      detail::write_floats(w, f->bias);
    }
  }
  w.seal();
  return w.take();
}

inline NetworkState<float> checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic (not a checkpoint or unsupported version)");
  r.take(8);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  verify_crc_trailer(bytes, "checkpoint");
  const NetworkSpec spec = detail::read_spec(r);
  const std::uint64_t seed = r.u64();
  NetworkState<float> state = build_network<float>(spec, seed);
  state.iteration = r.u64();
  state.norm.mean = r.f64();
  state.norm.std = r.f64();
  for (auto& l : state.layers) {
    if (auto* c = std::get_if<ConvLayer<float>>(&l)) {
      if (r.u32() != c->fan_in()) throw FormatError("checkpoint: fan-in does not match spec");
      for (auto& row : c->connections)
        for (auto& idx : row) idx = r.u32();
      detail::read_floats(r, c->weights);
      detail::read_floats(r, c->bias);
      try {
        c->validate();
      } catch (const ShapeError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
      }
    } else if (auto* f = std::get_if<FcLayer<float>>(&l)) {
      detail::read_floats(r, f->weights);
      detail::read_floats(r, f->bias);
    }
  }
  r.verify_seal();
  return state;
}

inline void save_checkpoint(const NetworkState<float>& state, const std::string& path) {
  write_file_bytes(path, checkpoint_bytes(state));
}

inline NetworkState<float> load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return checkpoint_from_bytes(bytes);
}

}  // namespace patchdesc
