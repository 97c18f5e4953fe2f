#pragma once

// Hinge embedding loss on the L2 distance between two descriptors:
//   matching pair:     l_P(d) = d
//   non-matching pair: l_N(d) = max(0, m - d)

#include <stdexcept>
#include <string>
#include <vector>

#include "patchdesc/network.hpp"
#include "patchdesc/tensor.hpp"

namespace patchdesc {

struct PairLossConfig {
  double margin = 1.0;

  void validate() const {
    if (!(margin > 0)) throw std::invalid_argument("margin must be positive");
  }
};

inline double pair_loss(double d, bool positive, const PairLossConfig& cfg) {
  if (!(d >= 0)) throw std::invalid_argument("pair_loss: distance must be non-negative, got " + std::to_string(d));
  return positive ? d : std::max(0.0, cfg.margin - d);
}

// dLoss/dd: 1 for matching pairs, -1 for an active hinge, 0 otherwise.
inline double pair_loss_slope(double d, bool positive, const PairLossConfig& cfg) {
  if (positive) return 1.0;
  return d < cfg.margin ? -1.0 : 0.0;
}

/// Gradient of `scale * loss` with respect to the first descriptor; the
/// gradient for the second one is its negation. Zero when d == 0.
template <typename T>
Tensor<T> pair_descriptor_grad(const Tensor<T>& d1, const Tensor<T>& d2, bool positive, const PairLossConfig& cfg,
                               double scale = 1.0) {
  const double d = l2_distance(d1, d2);
  Tensor<T> g(d1.shape());
  const double slope = pair_loss_slope(d, positive, cfg);
  if (d == 0.0 || slope == 0.0) return g;
  const double k = scale * slope / d;
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = static_cast<T>(k * (static_cast<double>(d1[i]) - static_cast<double>(d2[i])));
  return g;
}

struct PairEvaluation {
  double distance = 0;
  double loss = 0;
};

/// Siamese forward/backward for one pair through shared weights. Both
/// branches are backpropagated and their parameter gradients summed into
/// `grads`, scaled by `scale`.
template <typename T>
PairEvaluation pair_backward(const NetworkState<T>& state, const Tensor<T>& x1, const Tensor<T>& x2, bool positive,
                             const PairLossConfig& cfg, std::vector<Tensor<T>>& grads, double scale = 1.0) {
  const auto c1 = forward(state, x1);
  const auto c2 = forward(state, x2);
  PairEvaluation ev;
  ev.distance = l2_distance(c1.output(), c2.output());
  ev.loss = pair_loss(ev.distance, positive, cfg);
  Tensor<T> g1 = pair_descriptor_grad(c1.output(), c2.output(), positive, cfg, scale);
  Tensor<T> g2 = g1;
  g2 *= T(-1);
  backward(state, c1, g1, grads);
  backward(state, c2, g2, grads);
  return ev;
}

// Loss of one pair without gradients.
template <typename T>
PairEvaluation pair_forward(const NetworkState<T>& state, const Tensor<T>& x1, const Tensor<T>& x2, bool positive,
                            const PairLossConfig& cfg) {
  PairEvaluation ev;
  ev.distance = l2_distance(describe(state, x1), describe(state, x2));
  ev.loss = pair_loss(ev.distance, positive, cfg);
  return ev;
}

}  // namespace patchdesc
