#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "patchdesc/error.hpp"
#include "patchdesc/layers.hpp"
#include "patchdesc/rng.hpp"
#include "patchdesc/tensor.hpp"

namespace patchdesc {

inline constexpr std::size_t kPatchSize = 64;

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

struct ConvStageSpec {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t pool = 1;
  std::size_t fan_in = 0;  // 0: dense for the first stage, ceil(n_in / 2) after

  friend bool operator==(const ConvStageSpec&, const ConvStageSpec&) = default;
};

struct NetworkSpec {
  std::string name;
  std::vector<ConvStageSpec> conv;
  std::size_t fc_outputs = 0;  // 0: fully convolutional
  Unit unit = Unit::Tanh;
  bool normalize = true;
  PoolMode pooling = PoolMode::L2;
  double norm_sigma = 1.0;
  std::size_t input_size = kPatchSize;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline std::size_t resolved_fan_in(const NetworkSpec& spec, std::size_t stage) {
  const auto& s = spec.conv.at(stage);
  if (stage == 0) return 1;  // single grayscale input map
  if (s.fan_in != 0) return s.fan_in;
  const std::size_t n_in = spec.conv[stage - 1].filters;
  return (n_in + 1) / 2;
}

/// Spatial extent after each conv and pool sublayer, starting at the input.
/// Throws if any stage would need padding or a pool window does not divide.
inline std::vector<std::size_t> spatial_trace(const NetworkSpec& spec) {
  std::vector<std::size_t> trace{spec.input_size};
  std::size_t s = spec.input_size;
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const auto& st = spec.conv[i];
    if (st.kernel == 0 || st.filters == 0 || st.pool == 0)
      throw ShapeError(spec.name + ": stage " + std::to_string(i) + " has a zero extent");
    if (s < st.kernel)
      throw ShapeError(spec.name + ": stage " + std::to_string(i) + " kernel " + std::to_string(st.kernel) +
                       " exceeds input " + std::to_string(s) + " (padding would be required)");
    s = s - st.kernel + 1;
    trace.push_back(s);
    if (s % st.pool != 0)
      throw ShapeError(spec.name + ": stage " + std::to_string(i) + " pool " + std::to_string(st.pool) +
                       " does not divide " + std::to_string(s));
    s /= st.pool;
    trace.push_back(s);
  }
  return trace;
}

inline std::size_t output_dim(const NetworkSpec& spec) {
  if (spec.fc_outputs) return spec.fc_outputs;
  const std::size_t s = spatial_trace(spec).back();
  return spec.conv.back().filters * s * s;
}

inline const std::vector<std::string>& registry_names() {
  static const std::vector<std::string> names{"CNN1_NN1", "CNN2",     "CNN2a_NN1", "CNN2b_NN1",
                                              "CNN3",     "CNN3_NN1", "CNN3_WIDE"};
  return names;
}

/// Architectures by name. CNN3_NN1 accepts an output dimension (128 or 32).
inline NetworkSpec registry_spec(const std::string& name, std::size_t fc_outputs = 128) {
  NetworkSpec s;
  s.name = name;
  if (name == "CNN1_NN1") {
    s.conv = {{32, 9, 14}};
    s.fc_outputs = 128;
  } else if (name == "CNN2") {
    s.conv = {{64, 5, 4}, {128, 5, 11}};
  } else if (name == "CNN2a_NN1") {
    s.conv = {{32, 5, 3}, {64, 5, 4}};
    s.fc_outputs = 128;
  } else if (name == "CNN2b_NN1") {
    s.conv = {{32, 9, 4}, {64, 5, 5}};
    s.fc_outputs = 128;
  } else if (name == "CNN3") {
    s.conv = {{32, 7, 2}, {64, 6, 3}, {128, 5, 4}};
  } else if (name == "CNN3_NN1") {
    s.conv = {{32, 7, 2}, {64, 6, 3}, {128, 5, 4}};
    s.fc_outputs = fc_outputs;
  } else if (name == "CNN3_WIDE") {
    // Twice the CNN3 default fan-in in layers 2 and 3.
    s.conv = {{64, 7, 2}, {96, 6, 3, 32}, {128, 5, 4, 64}};
  } else {
    throw std::invalid_argument("unknown architecture '" + name + "'");
  }
  return s;
}

// Multiply-accumulates of one forward pass through the filter and
// fully-connected sublayers.
inline std::size_t forward_macs(const NetworkSpec& spec) {
  const auto trace = spatial_trace(spec);
  std::size_t macs = 0;
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const auto& st = spec.conv[i];
    const std::size_t fan_in = i == 0 ? 1 : (st.fan_in ? st.fan_in : (spec.conv[i - 1].filters + 1) / 2);
    macs += st.filters * fan_in * st.kernel * st.kernel * trace[2 * i + 1] * trace[2 * i + 1];
  }
  if (spec.fc_outputs) macs += spec.fc_outputs * spec.conv.back().filters * trace.back() * trace.back();
  return macs;
}

// Validates the shape chain and connectivity; returns the output dimension.
inline std::size_t validate_spec(const NetworkSpec& spec) {
  if (spec.conv.empty()) throw ShapeError(spec.name + ": needs at least one convolutional stage");
  spatial_trace(spec);
  for (std::size_t i = 1; i < spec.conv.size(); ++i) {
    const std::size_t c = resolved_fan_in(spec, i);
    if (c == 0 || c > spec.conv[i - 1].filters)
      throw ShapeError(spec.name + ": stage " + std::to_string(i) + " fan-in out of range");
  }
  if (spec.conv[0].fan_in > 1) throw ShapeError(spec.name + ": first stage is densely connected to one map");
  if (!(spec.norm_sigma > 0)) throw ShapeError(spec.name + ": normalization sigma must be positive");
  return output_dim(spec);
}

// ---------------------------------------------------------------------------
// Network state
// ---------------------------------------------------------------------------

struct ActivationLayer {
  Unit unit = Unit::Tanh;
};

template <typename T>
using Sublayer = std::variant<ConvLayer<T>, ActivationLayer, PoolSpec, NormSpec, FcLayer<T>>;

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

template <typename T>
struct NetworkState {
  NetworkSpec spec;
  std::vector<Sublayer<T>> layers;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  NormStats norm;  // input normalization, applied by describe_patch()

  // Learnable tensors in layer order: weights then bias of each conv/fc.
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers) {
      if (auto* c = std::get_if<ConvLayer<T>>(&l)) {
        out.push_back(&c->weights);
        out.push_back(&c->bias);
      } else if (auto* f = std::get_if<FcLayer<T>>(&l)) {
        out.push_back(&f->weights);
        out.push_back(&f->bias);
      }
    }
    return out;
  }
  std::vector<const Tensor<T>*> parameters() const {
    std::vector<const Tensor<T>*> out;
    for (auto* p : const_cast<NetworkState*>(this)->parameters()) out.push_back(p);
    return out;
  }

  template <typename U>
  NetworkState<U> cast() const {
    NetworkState<U> s{spec, {}, seed, iteration, norm};
    for (const auto& l : layers) {
      std::visit(
          [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, ConvLayer<T>> || std::is_same_v<V, FcLayer<T>>)
              s.layers.emplace_back(v.template cast<U>());
            else
              s.layers.emplace_back(v);
          },
          l);
    }
    return s;
  }
};

// Zero-initialized gradients with the same structure as parameters().
template <typename T>
std::vector<Tensor<T>> zero_grads(const NetworkState<T>& state) {
  std::vector<Tensor<T>> g;
  for (const auto* p : state.parameters()) g.emplace_back(p->shape());
  return g;
}

template <typename T>
std::size_t param_count(const NetworkState<T>& state) {
  std::size_t n = 0;
  for (const auto* p : state.parameters()) n += p->size();
  return n;
}

/// Builds the sublayer chain for a spec and initializes it from `seed`.
///
/// Each conv stage is filter -> non-linearity -> pooling -> normalization.
/// The normalization sublayer is left out when a stage ends at 1x1, since
/// subtracting the local mean of a single pixel always yields zero. The
/// last non-linearity of the network is Tanh regardless of the unit type.
/// Weights are uniform in +-1/sqrt(fan_in), biases zero. Randomness is drawn
/// per layer in order: connection table, then weights.
template <typename T>
NetworkState<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  Rng rng(seed);
  NetworkState<T> state;
  state.spec = spec;
  state.seed = seed;
  const auto trace = spatial_trace(spec);
  const NormSpec norm = NormSpec::gaussian(spec.norm_sigma);
  std::size_t n_in = 1;
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const auto& st = spec.conv[i];
    const std::size_t fan_in = resolved_fan_in(spec, i);
    auto conv = make_conv_layer<T>(n_in, st.filters, st.kernel, fan_in, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in * st.kernel * st.kernel));
    conv.weights = Tensor<T>::uniform(conv.weights.shape(), rng, -bound, bound);
    state.layers.emplace_back(std::move(conv));
    const bool last = (i + 1 == spec.conv.size()) && spec.fc_outputs == 0;
    state.layers.emplace_back(ActivationLayer{last ? Unit::Tanh : spec.unit});
    if (st.pool > 1) state.layers.emplace_back(PoolSpec{st.pool, spec.pooling});
    if (spec.normalize && trace[2 * (i + 1)] > 1) state.layers.emplace_back(norm);
    n_in = st.filters;
  }
  if (spec.fc_outputs) {
    const std::size_t s = trace.back();
    const std::size_t flat = spec.conv.back().filters * s * s;
    auto fc = make_fc_layer<T>(flat, spec.fc_outputs);
    const double bound = 1.0 / std::sqrt(static_cast<double>(flat));
    fc.weights = Tensor<T>::uniform(fc.weights.shape(), rng, -bound, bound);
    state.layers.emplace_back(std::move(fc));
    state.layers.emplace_back(ActivationLayer{Unit::Tanh});
  }
  return state;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Activations of one forward pass: acts[i] is the input of sublayer i,
/// acts.back() the descriptor.
template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> acts;
  const Tensor<T>& output() const { return acts.back(); }
};

template <typename T>
Tensor<T> sublayer_forward(const Sublayer<T>& layer, const Tensor<T>& x) {
  return std::visit(
      [&](const auto& l) -> Tensor<T> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, ConvLayer<T>>) {
          return conv_forward(l, x);
        } else if constexpr (std::is_same_v<L, ActivationLayer>) {
          return l.unit == Unit::Tanh ? tanh_forward(x) : relu_forward(x);
        } else if constexpr (std::is_same_v<L, PoolSpec>) {
          return pool_forward(l, x);
        } else if constexpr (std::is_same_v<L, NormSpec>) {
          return subnorm_forward(l, x);
        } else {
          return fc_forward(l, x);
        }
      },
      layer);
}

inline void check_patch_shape(const Shape& s, std::size_t size) {
  if (s != Shape{1, size, size})
    throw ShapeError("descriptor input must be [1][" + std::to_string(size) + "][" + std::to_string(size) +
                     "], got " + shape_to_string(s));
}

template <typename T>
ForwardCache<T> forward(const NetworkState<T>& state, Tensor<T> patch) {
  check_patch_shape(patch.shape(), state.spec.input_size);
  ForwardCache<T> cache;
  cache.acts.reserve(state.layers.size() + 1);
  cache.acts.push_back(std::move(patch));
  for (const auto& l : state.layers) cache.acts.push_back(sublayer_forward(l, cache.acts.back()));
  cache.acts.back() = std::move(cache.acts.back()).flattened();
  return cache;
}

/// Descriptor D(x) of one (already normalized) patch.
template <typename T>
Tensor<T> describe(const NetworkState<T>& state, const Tensor<T>& patch) {
  check_patch_shape(patch.shape(), state.spec.input_size);
  Tensor<T> x = patch;
  for (const auto& l : state.layers) x = sublayer_forward(l, x);
  return std::move(x).flattened();
}

/// Backpropagates dLoss/dDescriptor through a cached forward and adds the
/// parameter gradients into `grads` (layout of parameters()).
template <typename T>
void backward(const NetworkState<T>& state, const ForwardCache<T>& cache, const Tensor<T>& grad_descriptor,
              std::vector<Tensor<T>>& grads) {
  if (cache.acts.size() != state.layers.size() + 1) throw ShapeError("backward: cache does not match network");
  if (grad_descriptor.size() != cache.output().size()) throw ShapeError("backward: descriptor gradient size");
  // Parameter slot of each sublayer.
  std::vector<std::size_t> slot(state.layers.size(), 0);
  std::size_t next = 0;
  for (std::size_t i = 0; i < state.layers.size(); ++i) {
    slot[i] = next;
    if (std::holds_alternative<ConvLayer<T>>(state.layers[i]) || std::holds_alternative<FcLayer<T>>(state.layers[i]))
      next += 2;
  }
  if (grads.size() != next) throw ShapeError("backward: gradient buffer does not match network");

  Tensor<T> g = grad_descriptor;
  for (std::size_t ri = state.layers.size(); ri-- > 0;) {
    const Tensor<T>& in = cache.acts[ri];
    const Tensor<T>& out = cache.acts[ri + 1];
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            auto cg = conv_backward(l, in, g.reshaped(Shape{l.n_out, in.dim(1) - l.kernel + 1, in.dim(2) - l.kernel + 1}),
                                    ri != 0);
            grads[slot[ri]] += cg.weights;
            grads[slot[ri] + 1] += cg.bias;
            g = std::move(cg.input);
          } else if constexpr (std::is_same_v<L, ActivationLayer>) {
            const Tensor<T> go = g.reshaped(in.shape());
            g = l.unit == Unit::Tanh ? tanh_backward(out.reshaped(in.shape()), go) : relu_backward(in, go);
          } else if constexpr (std::is_same_v<L, PoolSpec>) {
            const Shape os{in.dim(0), in.dim(1) / l.size, in.dim(2) / l.size};
            g = pool_backward(l, in, out.reshaped(os), g.reshaped(os));
          } else if constexpr (std::is_same_v<L, NormSpec>) {
            g = subnorm_backward(l, g.reshaped(in.shape()));
          } else {
            auto fg = fc_backward(l, in, g);
            grads[slot[ri]] += fg.weights;
            grads[slot[ri] + 1] += fg.bias;
            g = std::move(fg.input);
          }
        },
        state.layers[ri]);
  }
}

}  // namespace patchdesc
