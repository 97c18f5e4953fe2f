#pragma once

// Central finite-difference checks of every hand-written backward, run in
// double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "patchdesc/layers.hpp"
#include "patchdesc/loss.hpp"
#include "patchdesc/network.hpp"
#include "patchdesc/rng.hpp"
#include "patchdesc/tensor.hpp"

namespace patchdesc {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t checked = 0;

  bool pass() const { return checked > 0 && max_rel_error <= tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  double floor = 1e-8;  // denominator floor for the relative error
  double tolerance = 1e-4;
  double smooth_tolerance = 1e-6;  // tanh and fully-connected
};

namespace gradcheck_detail {

inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// (f(x+h) - f(x-h)) / 2h, restoring x.
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double fp = f();
  x = saved - h;
  const double fm = f();
  x = saved;
  return (fp - fm) / (2 * h);
}

inline void check_all(GradCheckResult& r, const std::function<double()>& f, Tensor<double>& values,
                      const Tensor<double>& analytic, const GradCheckOptions& opt) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double num = central_difference(f, values[i], opt.step);
    r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], num, opt.floor));
    ++r.checked;
  }
}

inline Tensor<double> random_tensor(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  return Tensor<double>::uniform(s, rng, lo, hi);
}

// Scalar probe L = sum(r * out) for a fixed random r.
inline double probe(const Tensor<double>& out, const Tensor<double>& r) {
  double acc = 0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * r[i];
  return acc;
}

inline void randomize_parameters(NetworkState<double>& state, Rng& rng) {
  for (auto* p : state.parameters()) {
    if (p->rank() == 1) *p = Tensor<double>::uniform(p->shape(), rng, -0.1, 0.1);
  }
}

}  // namespace gradcheck_detail

/// Checks each sublayer type on small random inputs against a random linear
/// probe of its output.
inline std::vector<GradCheckResult> layer_gradchecks(std::uint64_t seed = 1, const GradCheckOptions& opt = {}) {
  using namespace gradcheck_detail;
  Rng rng(seed);
  std::vector<GradCheckResult> results;

  auto conv_case = [&](const std::string& name, std::size_t n_in, std::size_t n_out, std::size_t k, std::size_t fan,
                       std::size_t hw) {
    auto layer = make_conv_layer<double>(n_in, n_out, k, fan, rng);
    layer.weights = random_tensor(layer.weights.shape(), rng);
    layer.bias = random_tensor(layer.bias.shape(), rng);
    auto x = random_tensor({n_in, hw, hw}, rng);
    const auto r = random_tensor(conv_forward(layer, x).shape(), rng);
    const auto g = conv_backward(layer, x, r, true);
    auto f = [&] { return probe(conv_forward(layer, x), r); };
    GradCheckResult res{name, 0, opt.tolerance, 0};
    check_all(res, f, x, g.input, opt);
    check_all(res, f, layer.weights, g.weights, opt);
    check_all(res, f, layer.bias, g.bias, opt);
    results.push_back(res);
  };
  conv_case("conv dense", 3, 4, 3, 3, 7);
  conv_case("conv sparse", 6, 5, 4, 3, 8);
  conv_case("conv single map", 1, 3, 5, 1, 9);

  {
    auto x = random_tensor({3, 5, 5}, rng, -2, 2);
    const auto r = random_tensor(x.shape(), rng);
    const auto g = tanh_backward(tanh_forward(x), r);
    GradCheckResult res{"tanh", 0, opt.smooth_tolerance, 0};
    check_all(res, [&] { return probe(tanh_forward(x), r); }, x, g, opt);
    results.push_back(res);
  }
  {
    auto x = random_tensor({3, 5, 5}, rng);
    for (std::size_t i = 0; i < x.size(); ++i)  // keep clear of the kink
      if (std::abs(x[i]) < 0.05) x[i] = 0.5;
    const auto r = random_tensor(x.shape(), rng);
    const auto g = relu_backward(x, r);
    GradCheckResult res{"relu", 0, opt.tolerance, 0};
    check_all(res, [&] { return probe(relu_forward(x), r); }, x, g, opt);
    results.push_back(res);
  }
  for (const auto mode : {PoolMode::L2, PoolMode::Max}) {
    for (const std::size_t p : {2u, 3u}) {
      const PoolSpec spec{p, mode};
      auto x = random_tensor({2, 6, 6}, rng);
      const auto out = pool_forward(spec, x);
      const auto r = random_tensor(out.shape(), rng);
      const auto g = pool_backward(spec, x, out, r);
      GradCheckResult res{std::string(mode == PoolMode::L2 ? "l2 pool " : "max pool ") + std::to_string(p), 0,
                          opt.tolerance, 0};
      check_all(res, [&] { return probe(pool_forward(spec, x), r); }, x, g, opt);
      results.push_back(res);
    }
  }
  for (const std::size_t hw : {3u, 8u}) {
    const auto spec = NormSpec::gaussian(1.0);
    auto x = random_tensor({2, hw, hw}, rng);
    const auto r = random_tensor(x.shape(), rng);
    const auto g = subnorm_backward(spec, r);
    GradCheckResult res{"subnorm " + std::to_string(hw) + "x" + std::to_string(hw), 0, opt.tolerance, 0};
    check_all(res, [&] { return probe(subnorm_forward(spec, x), r); }, x, g, opt);
    results.push_back(res);
  }
  {
    auto layer = make_fc_layer<double>(12, 5);
    layer.weights = random_tensor(layer.weights.shape(), rng);
    layer.bias = random_tensor(layer.bias.shape(), rng);
    auto x = random_tensor({12}, rng);
    const auto r = random_tensor({5}, rng);
    const auto g = fc_backward(layer, x, r);
    auto f = [&] { return probe(fc_forward(layer, x), r); };
    GradCheckResult res{"fully connected", 0, opt.smooth_tolerance, 0};
    check_all(res, f, x, g.input, opt);
    check_all(res, f, layer.weights, g.weights, opt);
    check_all(res, f, layer.bias, g.bias, opt);
    results.push_back(res);
  }
  for (const bool positive : {true, false}) {
    auto a = random_tensor({6}, rng), b = random_tensor({6}, rng);
    PairLossConfig cfg;
    cfg.margin = 2 * l2_distance(a, b);  // active hinge
    const auto g = pair_descriptor_grad(a, b, positive, cfg);
    auto f = [&] { return pair_loss(l2_distance(a, b), positive, cfg); };
    GradCheckResult res{positive ? "hinge loss positive" : "hinge loss negative", 0, opt.smooth_tolerance, 0};
    check_all(res, f, a, g, opt);
    auto gb = g;
    gb *= -1.0;
    check_all(res, f, b, gb, opt);
    results.push_back(res);
  }
  return results;
}

/// Siamese pipeline check on `spec`: a positive and an active negative pair
/// through shared weights. Checks `per_tensor` sampled coordinates of every
/// parameter tensor (all of them when per_tensor is 0) plus `directions`
/// random directional derivatives over all parameters.
inline GradCheckResult network_gradcheck(const NetworkSpec& spec, std::uint64_t seed, std::size_t per_tensor,
                                         std::size_t directions, const GradCheckOptions& opt = {}) {
  using namespace gradcheck_detail;
  Rng rng(seed);
  auto state = build_network<double>(spec, seed);
  randomize_parameters(state, rng);
  const Shape in{1, spec.input_size, spec.input_size};
  const auto x1 = random_tensor(in, rng), x2 = random_tensor(in, rng), x3 = random_tensor(in, rng);
  PairLossConfig cfg;
  cfg.margin = 2 * l2_distance(describe(state, x1), describe(state, x3)) + 1e-3;

  auto loss = [&] {
    return pair_forward(state, x1, x2, true, cfg).loss + pair_forward(state, x1, x3, false, cfg).loss;
  };
  auto grads = zero_grads(state);
  pair_backward(state, x1, x2, true, cfg, grads);
  pair_backward(state, x1, x3, false, cfg, grads);

  GradCheckResult res{"siamese " + spec.name, 0, opt.tolerance, 0};
  auto params = state.parameters();
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<double>& p = *params[t];
    const std::size_t n = per_tensor == 0 ? p.size() : std::min(per_tensor, p.size());
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t i = per_tensor == 0 ? s : static_cast<std::size_t>(rng.below(p.size()));
      const double num = central_difference(loss, p[i], opt.step);
      res.max_rel_error = std::max(res.max_rel_error, rel_error(grads[t][i], num, opt.floor));
      ++res.checked;
    }
  }
  for (std::size_t d = 0; d < directions; ++d) {
    std::vector<Tensor<double>> dir;
    double analytic = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
      dir.push_back(random_tensor(params[t]->shape(), rng));
      for (std::size_t i = 0; i < dir[t].size(); ++i) analytic += dir[t][i] * grads[t][i];
    }
    const auto saved = [&] {
      std::vector<Tensor<double>> v;
      for (auto* p : params) v.push_back(*p);
      return v;
    }();
    auto shifted = [&](double h) {
      for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < dir[t].size(); ++i) (*params[t])[i] = saved[t][i] + h * dir[t][i];
      return loss();
    };
    const double num = (shifted(opt.step) - shifted(-opt.step)) / (2 * opt.step);
    for (std::size_t t = 0; t < params.size(); ++t) *params[t] = saved[t];
    res.max_rel_error = std::max(res.max_rel_error, rel_error(analytic, num, opt.floor));
    ++res.checked;
  }
  return res;
}

/// CNN3 topology (64 -> 58 -> 29 -> 24 -> 8 -> 4 -> 1) with few filters, so
/// every parameter can be checked.
inline NetworkSpec narrow_cnn3_spec() {
  NetworkSpec s = registry_spec("CNN3");
  s.name = "CNN3 narrow";
  s.conv[0].filters = 3;
  s.conv[1].filters = 4;
  s.conv[2].filters = 5;
  return s;
}

}  // namespace patchdesc
