// gradcheck.hpp: central finite-difference verification of backward passes.
#pragma once

#include <string>
#include <vector>

#include "donna/layers.hpp"
#include "donna/rng.hpp"

namespace donna {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_entry;
  // smallest |relu preactivation| seen in the analytic forward; callers
  // reseed and retry when this is close enough to the kink to make the
  // finite difference meaningless
  double min_relu_margin = 1e300;
  std::vector<std::pair<std::string, double>> per_entry;
};

namespace detail {

inline double projected_output(Layer& net, const Tensor& x, const Tensor& r) {
  Tensor y = net.forward(x, Mode::train);
  check(y.same_shape(r), "gradcheck: projection shape mismatch");
  double s = 0.0;
  const double* yp = y.data();
  const double* rp = r.data();
  for (long long i = 0; i < y.numel(); ++i) s += yp[i] * rp[i];
  return s;
}

}  // namespace detail

// Checks d(r . f(x))/dtheta for every parameter element (and d/dx for every
// input element) against central differences with step h. The projection r
// is a fixed random vector drawn from `seed`, which turns the tensor-valued
// output into a scalar objective without losing any gradient path.
inline GradCheckResult check_gradients(Layer& net, const Tensor& input,
                                       std::uint64_t seed, double h = 1e-5,
                                       bool check_input = true) {
  GradCheckResult res;
  auto params = collect_params(net);
  for (const auto& p : params) {
    check(all_finite(p.param->value),
          "gradcheck: parameter '" + p.name + "' is not finite");
  }
  Rng rng(seed);
  Tensor probe_x = input;
  std::vector<int> out_sh = net.out_shape(input.shape());
  Tensor r(out_sh);
  for (long long i = 0; i < r.numel(); ++i) r[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0);

  // analytic gradients, with the relu kink probe armed
  zero_grads(net);
  ReluProbe& probe = relu_probe();
  probe.enabled = true;
  probe.min_abs = 1e300;
  net.forward(input, Mode::train);
  probe.enabled = false;
  res.min_relu_margin = probe.min_abs;
  Tensor dx = net.backward(r);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.param->grad);

  auto record = [&](const std::string& name, double ana, double num) {
    const double denom = std::max({std::abs(ana), std::abs(num), 1e-6});
    const double rel = std::abs(ana - num) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_entry = name;
    }
    return rel;
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& w = params[pi].param->value;
    double worst = 0.0;
    for (long long j = 0; j < w.numel(); ++j) {
      const double keep = w[static_cast<std::size_t>(j)];
      w[static_cast<std::size_t>(j)] = keep + h;
      const double lp = detail::projected_output(net, input, r);
      w[static_cast<std::size_t>(j)] = keep - h;
      const double lm = detail::projected_output(net, input, r);
      w[static_cast<std::size_t>(j)] = keep;
      const double num = (lp - lm) / (2.0 * h);
      worst = std::max(worst, record(params[pi].name, analytic[pi][static_cast<std::size_t>(j)], num));
    }
    res.per_entry.emplace_back(params[pi].name, worst);
  }

  if (check_input) {
    double worst = 0.0;
    for (long long j = 0; j < probe_x.numel(); ++j) {
      const double keep = probe_x[static_cast<std::size_t>(j)];
      probe_x[static_cast<std::size_t>(j)] = keep + h;
      const double lp = detail::projected_output(net, probe_x, r);
      probe_x[static_cast<std::size_t>(j)] = keep - h;
      const double lm = detail::projected_output(net, probe_x, r);
      probe_x[static_cast<std::size_t>(j)] = keep;
      const double num = (lp - lm) / (2.0 * h);
      worst = std::max(worst, record("(input)", dx[static_cast<std::size_t>(j)], num));
    }
    res.per_entry.emplace_back("(input)", worst);
  }

  return res;
}

}  // namespace donna
