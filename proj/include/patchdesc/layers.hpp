#pragma once

// Sublayers of the descriptor networks: filter (valid convolution with a
// sparse connection table), non-linearity, pooling, subtractive
// normalization and a fully-connected layer. Every forward has a matching
// hand-written backward.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "patchdesc/error.hpp"
#include "patchdesc/rng.hpp"
#include "patchdesc/tensor.hpp"

namespace patchdesc {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void require_rank3(const Shape& s, const char* where) {
  if (s.size() != 3)
    throw ShapeError(std::string(where) + ": expected [maps][h][w], got " + shape_to_string(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Filter sublayer
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLayer {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::size_t kernel = 0;
  // Sorted input-map indices feeding each output filter.
  std::vector<std::vector<std::uint32_t>> connections;
  Tensor<T> weights;  // [n_out][fan_in][k][k]
  Tensor<T> bias;     // [n_out]

  std::size_t fan_in() const { return connections.empty() ? 0 : connections.front().size(); }
  bool dense() const { return fan_in() == n_in; }

  void validate() const {
    if (n_in == 0 || n_out == 0 || kernel == 0) throw ShapeError("conv layer has a zero extent");
    if (connections.size() != n_out) throw ShapeError("conv connection table size != n_out");
    const std::size_t c = fan_in();
    if (c == 0 || c > n_in) throw ShapeError("conv fan-in out of range");
    for (const auto& row : connections) {
      if (row.size() != c) throw ShapeError("conv filters must share one fan-in");
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (row[i] >= n_in) throw ShapeError("conv connection index out of range");
        if (i > 0 && row[i] <= row[i - 1])
          throw ShapeError("conv connection list must be sorted and duplicate-free");
      }
    }
    if (weights.shape() != Shape{n_out, c, kernel, kernel})
      throw ShapeError("conv weights shape " + shape_to_string(weights.shape()));
    if (bias.shape() != Shape{n_out}) throw ShapeError("conv bias shape " + shape_to_string(bias.shape()));
  }

  // [n_out][n_in*k*k] with zeros where a filter is not connected.
  detail::RowMatrix<T> dense_weights() const {
    const std::size_t kk = kernel * kernel;
    detail::RowMatrix<T> w = detail::RowMatrix<T>::Zero(n_out, n_in * kk);
    const std::size_t c = fan_in();
    for (std::size_t f = 0; f < n_out; ++f)
      for (std::size_t j = 0; j < c; ++j)
        std::copy_n(weights.data() + (f * c + j) * kk, kk, w.data() + f * n_in * kk + connections[f][j] * kk);
    return w;
  }

  template <typename U>
  ConvLayer<U> cast() const {
    return ConvLayer<U>{n_in, n_out, kernel, connections, weights.template cast<U>(), bias.template cast<U>()};
  }
};

// Connection table: dense when fan_in == n_in, otherwise each filter draws
// fan_in distinct input maps uniformly at random.
inline std::vector<std::vector<std::uint32_t>> draw_connections(std::size_t n_in, std::size_t n_out,
                                                                std::size_t fan_in, Rng& rng) {
  if (fan_in == 0 || fan_in > n_in) throw ShapeError("fan-in must be in [1, n_in]");
  std::vector<std::vector<std::uint32_t>> table(n_out);
  std::vector<std::uint32_t> pool(n_in);
  for (std::size_t f = 0; f < n_out; ++f) {
    for (std::size_t i = 0; i < n_in; ++i) pool[i] = static_cast<std::uint32_t>(i);
    if (fan_in < n_in) {
      for (std::size_t i = 0; i < fan_in; ++i) std::swap(pool[i], pool[i + rng.below(n_in - i)]);
    }
    table[f].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(fan_in));
    std::sort(table[f].begin(), table[f].end());
  }
  return table;
}

template <typename T>
ConvLayer<T> make_conv_layer(std::size_t n_in, std::size_t n_out, std::size_t kernel, std::size_t fan_in,
                             Rng& rng) {
  ConvLayer<T> layer;
  layer.n_in = n_in;
  layer.n_out = n_out;
  layer.kernel = kernel;
  layer.connections = draw_connections(n_in, n_out, fan_in, rng);
  layer.weights = Tensor<T>({n_out, fan_in, kernel, kernel});
  layer.bias = Tensor<T>({n_out});
  return layer;
}

namespace detail {

// cols[(c*k + ky)*k + kx][oy*wo + ox] = in[c][oy+ky][ox+kx]
template <typename T>
RowMatrix<T> im2col(const Tensor<T>& in, std::size_t k) {
  const std::size_t maps = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t ho = h - k + 1, wo = w - k + 1;
  RowMatrix<T> cols(maps * k * k, ho * wo);
  for (std::size_t c = 0; c < maps; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy)
          std::copy_n(in.data() + (c * h + oy + ky) * w + kx, wo, row + oy * wo);
      }
  return cols;
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, std::size_t k, Tensor<T>& out) {
  const std::size_t maps = out.dim(0), h = out.dim(1), w = out.dim(2);
  const std::size_t ho = h - k + 1, wo = w - k + 1;
  for (std::size_t c = 0; c < maps; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols.data() + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          T* dst = out.data() + (c * h + oy + ky) * w + kx;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) dst[ox] += src[ox];
        }
      }
}

template <typename T>
void check_conv_input(const ConvLayer<T>& layer, const Tensor<T>& input) {
  require_rank3(input.shape(), "conv");
  if (input.dim(0) != layer.n_in)
    throw ShapeError("conv: expected " + std::to_string(layer.n_in) + " input maps, got " +
                     std::to_string(input.dim(0)));
  if (input.dim(1) < layer.kernel || input.dim(2) < layer.kernel)
    throw ShapeError("conv: input " + shape_to_string(input.shape()) + " smaller than kernel " +
                     std::to_string(layer.kernel));
}

// For each input map, the (filter, slot) pairs that read it.
struct ConnectionGroup {
  std::vector<std::uint32_t> filters;
  std::vector<std::uint32_t> slots;
};

inline std::vector<ConnectionGroup> group_by_input(const std::vector<std::vector<std::uint32_t>>& table,
                                                   std::size_t n_in) {
  std::vector<ConnectionGroup> groups(n_in);
  for (std::size_t f = 0; f < table.size(); ++f)
    for (std::size_t j = 0; j < table[f].size(); ++j) {
      groups[table[f][j]].filters.push_back(static_cast<std::uint32_t>(f));
      groups[table[f][j]].slots.push_back(static_cast<std::uint32_t>(j));
    }
  return groups;
}

}  // namespace detail

template <typename T>
Tensor<T> conv_forward(const ConvLayer<T>& layer, const Tensor<T>& input) {
  detail::check_conv_input(layer, input);
  const std::size_t k = layer.kernel;
  const std::size_t ho = input.dim(1) - k + 1, wo = input.dim(2) - k + 1;
  const auto cols = detail::im2col(input, k);
  Tensor<T> out({layer.n_out, ho, wo});
  detail::MatrixMap<T> out_m(out.data(), layer.n_out, ho * wo);
  const std::size_t kk = k * k, npix = ho * wo;
  if (layer.dense()) {
    detail::ConstMatrixMap<T> w(layer.weights.data(), layer.n_out, layer.n_in * kk);
    out_m.noalias() = w * cols;
  } else {
    out_m.setZero();
    const std::size_t c = layer.fan_in();
    detail::RowMatrix<T> wc, tmp;
    for (const auto& grp : detail::group_by_input(layer.connections, layer.n_in)) {
      const std::size_t m = grp.filters.size();
      if (m == 0) continue;
      wc.resize(m, kk);
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(layer.weights.data() + (grp.filters[i] * c + grp.slots[i]) * kk, kk, wc.data() + i * kk);
      const std::size_t in_map = layer.connections[grp.filters[0]][grp.slots[0]];
      detail::ConstMatrixMap<T> block(cols.data() + in_map * kk * npix, kk, npix);
      tmp.noalias() = wc * block;
      for (std::size_t i = 0; i < m; ++i) out_m.row(grp.filters[i]) += tmp.row(i);
    }
  }
  for (std::size_t f = 0; f < layer.n_out; ++f) out_m.row(f).array() += layer.bias[f];
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;  // empty when not requested
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv_backward(const ConvLayer<T>& layer, const Tensor<T>& input, const Tensor<T>& grad_out,
                           bool need_input_grad = true) {
  detail::check_conv_input(layer, input);
  const std::size_t k = layer.kernel, kk = k * k;
  const std::size_t ho = input.dim(1) - k + 1, wo = input.dim(2) - k + 1;
  if (grad_out.shape() != Shape{layer.n_out, ho, wo})
    throw ShapeError("conv_backward: grad_out shape " + shape_to_string(grad_out.shape()));
  const auto cols = detail::im2col(input, k);
  detail::ConstMatrixMap<T> g(grad_out.data(), layer.n_out, ho * wo);

  ConvGrads<T> grads;
  grads.bias = Tensor<T>({layer.n_out});
  for (std::size_t f = 0; f < layer.n_out; ++f) grads.bias[f] = g.row(f).sum();

  const std::size_t c = layer.fan_in(), npix = ho * wo;
  grads.weights = Tensor<T>(layer.weights.shape());
  if (need_input_grad) grads.input = Tensor<T>(input.shape());
  if (layer.dense()) {
    detail::MatrixMap<T> gw(grads.weights.data(), layer.n_out, layer.n_in * kk);
    gw.noalias() = g * cols.transpose();
    if (need_input_grad) {
      detail::ConstMatrixMap<T> w(layer.weights.data(), layer.n_out, layer.n_in * kk);
      const detail::RowMatrix<T> gcols = w.transpose() * g;
      detail::col2im_add(gcols, k, grads.input);
    }
  } else {
    detail::RowMatrix<T> gcols;
    if (need_input_grad) gcols = detail::RowMatrix<T>::Zero(layer.n_in * kk, npix);
    detail::RowMatrix<T> wc, gc, gwc;
    for (const auto& grp : detail::group_by_input(layer.connections, layer.n_in)) {
      const std::size_t m = grp.filters.size();
      if (m == 0) continue;
      const std::size_t in_map = layer.connections[grp.filters[0]][grp.slots[0]];
      gc.resize(m, npix);
      for (std::size_t i = 0; i < m; ++i) gc.row(i) = g.row(grp.filters[i]);
      detail::ConstMatrixMap<T> block(cols.data() + in_map * kk * npix, kk, npix);
      gwc.noalias() = gc * block.transpose();
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(gwc.data() + i * kk, kk, grads.weights.data() + (grp.filters[i] * c + grp.slots[i]) * kk);
      if (need_input_grad) {
        wc.resize(m, kk);
        for (std::size_t i = 0; i < m; ++i)
          std::copy_n(layer.weights.data() + (grp.filters[i] * c + grp.slots[i]) * kk, kk, wc.data() + i * kk);
        detail::MatrixMap<T>(gcols.data() + in_map * kk * npix, kk, npix).noalias() = wc.transpose() * gc;
      }
    }
    if (need_input_grad) detail::col2im_add(gcols, k, grads.input);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Non-linearities
// ---------------------------------------------------------------------------

enum class Unit { Tanh, ReLU };

template <typename T>
Tensor<T> tanh_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> in(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> out(y.data(), static_cast<Eigen::Index>(y.size()));
  out = in.tanh();
  return y;
}

// Takes the forward output y = tanh(x).
template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  y.require_same_shape(grad_out, "tanh_backward");
  Tensor<T> g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = grad_out[i] * (T(1) - y[i] * y[i]);
  return g;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

// Subgradient 0 at x == 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  x.require_same_shape(grad_out, "relu_backward");
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

// ---------------------------------------------------------------------------
// Pooling (stride == window)
// ---------------------------------------------------------------------------

enum class PoolMode { L2, Max };

struct PoolSpec {
  std::size_t size = 2;
  PoolMode mode = PoolMode::L2;
};

namespace detail {
inline void check_pool_input(const PoolSpec& spec, const Shape& s) {
  require_rank3(s, "pool");
  if (spec.size == 0) throw ShapeError("pool window must be >= 1");
  if (s[1] % spec.size != 0 || s[2] % spec.size != 0)
    throw ShapeError("pool: spatial extent " + shape_to_string(s) + " not divisible by window " +
                     std::to_string(spec.size));
}
}  // namespace detail

template <typename T>
Tensor<T> pool_forward(const PoolSpec& spec, const Tensor<T>& in) {
  detail::check_pool_input(spec, in.shape());
  const std::size_t p = spec.size, maps = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t ho = h / p, wo = w / p;
  Tensor<T> out({maps, ho, wo});
  for (std::size_t c = 0; c < maps; ++c)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        if (spec.mode == PoolMode::L2) {
          T acc = 0;
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx) {
              const T v = in.at(c, oy * p + dy, ox * p + dx);
              acc += v * v;
            }
          out.at(c, oy, ox) = std::sqrt(acc);
        } else {
          T best = in.at(c, oy * p, ox * p);
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx) best = std::max(best, in.at(c, oy * p + dy, ox * p + dx));
          out.at(c, oy, ox) = best;
        }
      }
  return out;
}

// L2: grad * x / out, zero where out == 0. Max: routed to the first maximum in
// row-major order within the window.
template <typename T>
Tensor<T> pool_backward(const PoolSpec& spec, const Tensor<T>& in, const Tensor<T>& out,
                        const Tensor<T>& grad_out) {
  detail::check_pool_input(spec, in.shape());
  out.require_same_shape(grad_out, "pool_backward");
  const std::size_t p = spec.size, maps = in.dim(0);
  const std::size_t ho = in.dim(1) / p, wo = in.dim(2) / p;
  if (out.shape() != Shape{maps, ho, wo}) throw ShapeError("pool_backward: output shape mismatch");
  Tensor<T> g(in.shape());
  for (std::size_t c = 0; c < maps; ++c)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const T go = grad_out.at(c, oy, ox);
        if (spec.mode == PoolMode::L2) {
          const T o = out.at(c, oy, ox);
          if (o == T(0)) continue;
          const T scale = go / o;
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
              g.at(c, oy * p + dy, ox * p + dx) = scale * in.at(c, oy * p + dy, ox * p + dx);
        } else {
          std::size_t by = 0, bx = 0;
          T best = in.at(c, oy * p, ox * p);
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx) {
              const T v = in.at(c, oy * p + dy, ox * p + dx);
              if (v > best) {
                best = v;
                by = dy;
                bx = dx;
              }
            }
          g.at(c, oy * p + by, ox * p + bx) = go;
        }
      }
  return g;
}

// ---------------------------------------------------------------------------
// Subtractive normalization
// ---------------------------------------------------------------------------

/// Per-map subtraction of a Gaussian-weighted local mean over a 5x5 window.
/// Near the borders the kernel is renormalized over the in-bounds taps so the
/// subtracted term stays a weighted mean. The Gaussian is separable and so is
/// its in-bounds support, so filtering runs as a row pass and a column pass.
struct NormSpec {
  static constexpr std::size_t kSize = 5;
  static constexpr std::ptrdiff_t kRadius = 2;
  double sigma = 1.0;
  std::array<double, kSize> taps{};                // 1-D kernel, sums to 1
  std::array<double, kSize * kSize> kernel{};      // outer product of taps

  static NormSpec gaussian(double sigma = 1.0) {
    if (!(sigma > 0)) throw std::invalid_argument("normalization sigma must be positive");
    NormSpec s;
    s.sigma = sigma;
    double total = 0;
    for (std::ptrdiff_t d = -kRadius; d <= kRadius; ++d) {
      const double v = std::exp(-static_cast<double>(d * d) / (2 * sigma * sigma));
      s.taps[static_cast<std::size_t>(d + kRadius)] = v;
      total += v;
    }
    for (double& v : s.taps) v /= total;
    for (std::size_t i = 0; i < kSize; ++i)
      for (std::size_t j = 0; j < kSize; ++j) s.kernel[i * kSize + j] = s.taps[i] * s.taps[j];
    return s;
  }

  double tap(std::ptrdiff_t dy, std::ptrdiff_t dx) const {
    return kernel[static_cast<std::size_t>((dy + kRadius) * 5 + dx + kRadius)];
  }

  // In-bounds 1-D kernel mass around each of n positions.
  std::vector<double> support_1d(std::size_t n) const {
    std::vector<double> z(n, 0.0);
    const auto N = static_cast<std::ptrdiff_t>(n);
    for (std::ptrdiff_t i = 0; i < N; ++i)
      for (std::ptrdiff_t d = -kRadius; d <= kRadius; ++d)
        if (i + d >= 0 && i + d < N) z[static_cast<std::size_t>(i)] += taps[static_cast<std::size_t>(d + kRadius)];
    return z;
  }

  // Sum of in-bounds kernel taps around each pixel of an h x w map.
  std::vector<double> support(std::size_t h, std::size_t w) const {
    const auto zy = support_1d(h), zx = support_1d(w);
    std::vector<double> z(h * w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) z[y * w + x] = zy[y] * zx[x];
    return z;
  }
};

namespace detail {

// dst = G * src with in-bounds taps only (no renormalization).
template <typename T>
void gaussian_filter(const NormSpec& spec, const T* src, std::size_t h, std::size_t w, T* tmp, T* dst) {
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t r = NormSpec::kRadius;
  T k[NormSpec::kSize];
  for (std::size_t i = 0; i < NormSpec::kSize; ++i) k[i] = static_cast<T>(spec.taps[i]);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    const T* row = src + y * W;
    T* out = tmp + y * W;
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      T acc = 0;
      for (std::ptrdiff_t d = std::max(-r, -x); d <= std::min(r, W - 1 - x); ++d) acc += k[d + r] * row[x + d];
      out[x] = acc;
    }
  }
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    T* out = dst + y * W;
    std::fill(out, out + W, T(0));
    for (std::ptrdiff_t d = std::max(-r, -y); d <= std::min(r, H - 1 - y); ++d) {
      const T kd = k[d + r];
      const T* row = tmp + (y + d) * W;
      for (std::ptrdiff_t x = 0; x < W; ++x) out[x] += kd * row[x];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> subnorm_forward(const NormSpec& spec, const Tensor<T>& in) {
  detail::require_rank3(in.shape(), "subnorm");
  const std::size_t maps = in.dim(0), h = in.dim(1), w = in.dim(2), hw = h * w;
  const auto z = spec.support(h, w);
  std::vector<T> inv_z(hw);
  for (std::size_t i = 0; i < hw; ++i) inv_z[i] = static_cast<T>(1.0 / z[i]);
  Tensor<T> out(in.shape());
  std::vector<T> mean(hw), tmp(hw);
  for (std::size_t c = 0; c < maps; ++c) {
    const T* src = in.data() + c * hw;
    detail::gaussian_filter<T>(spec, src, h, w, tmp.data(), mean.data());
    T* dst = out.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] - mean[i] * inv_z[i];
  }
  return out;
}

// The map is linear, out = (I - Z^-1 G) in, so grad_in = grad_out - G (Z^-1 grad_out)
// (G is symmetric).
template <typename T>
Tensor<T> subnorm_backward(const NormSpec& spec, const Tensor<T>& grad_out) {
  detail::require_rank3(grad_out.shape(), "subnorm_backward");
  const std::size_t maps = grad_out.dim(0), h = grad_out.dim(1), w = grad_out.dim(2), hw = h * w;
  const auto z = spec.support(h, w);
  std::vector<T> inv_z(hw);
  for (std::size_t i = 0; i < hw; ++i) inv_z[i] = static_cast<T>(1.0 / z[i]);
  Tensor<T> g(grad_out.shape());
  std::vector<T> scaled(hw), spread(hw), tmp(hw);
  for (std::size_t c = 0; c < maps; ++c) {
    const T* src = grad_out.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) scaled[i] = src[i] * inv_z[i];
    detail::gaussian_filter<T>(spec, scaled.data(), h, w, tmp.data(), spread.data());
    T* dst = g.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] - spread[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully-connected layer
// ---------------------------------------------------------------------------

template <typename T>
struct FcLayer {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  Tensor<T> weights;  // [n_out][n_in]
  Tensor<T> bias;     // [n_out]

  template <typename U>
  FcLayer<U> cast() const {
    return FcLayer<U>{n_in, n_out, weights.template cast<U>(), bias.template cast<U>()};
  }
};

template <typename T>
FcLayer<T> make_fc_layer(std::size_t n_in, std::size_t n_out) {
  return FcLayer<T>{n_in, n_out, Tensor<T>({n_out, n_in}), Tensor<T>({n_out})};
}

// Input of any shape is read as a flat vector.
template <typename T>
Tensor<T> fc_forward(const FcLayer<T>& layer, const Tensor<T>& input) {
  if (input.size() != layer.n_in)
    throw ShapeError("fc: expected " + std::to_string(layer.n_in) + " inputs, got " +
                     std::to_string(input.size()));
  Tensor<T> out({layer.n_out});
  detail::ConstMatrixMap<T> w(layer.weights.data(), layer.n_out, layer.n_in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> x(input.data(), layer.n_in);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> y(out.data(), layer.n_out);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(layer.bias.data(), layer.n_out);
  y.noalias() = w * x;
  y += b;
  return out;
}

template <typename T>
struct FcGrads {
  Tensor<T> input;  // same shape as the forward input
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
FcGrads<T> fc_backward(const FcLayer<T>& layer, const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (input.size() != layer.n_in || grad_out.size() != layer.n_out)
    throw ShapeError("fc_backward: dimension mismatch");
  FcGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>({layer.n_out, layer.n_in}), grad_out.reshaped({layer.n_out})};
  detail::ConstMatrixMap<T> w(layer.weights.data(), layer.n_out, layer.n_in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> x(input.data(), layer.n_in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> g(grad_out.data(), layer.n_out);
  detail::MatrixMap<T> gw(grads.weights.data(), layer.n_out, layer.n_in);
  gw.noalias() = g * x.transpose();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gx(grads.input.data(), layer.n_in);
  gx.noalias() = w.transpose() * g;
  return grads;
}

// ---------------------------------------------------------------------------
// Parameter counts
// ---------------------------------------------------------------------------

template <typename T>
std::size_t param_count(const ConvLayer<T>& layer) {
  return layer.n_out * layer.fan_in() * layer.kernel * layer.kernel + layer.n_out;
}

template <typename T>
std::size_t param_count(const FcLayer<T>& layer) {
  return layer.n_out * layer.n_in + layer.n_out;
}

}  // namespace patchdesc
