#pragma once

// Adam with bias correction, plus a central-difference gradient checker used
// by the test suite and the `gradcheck` CLI command.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "timesiam/autodiff.hpp"
#include "timesiam/common.hpp"

namespace timesiam {

template <class S>
struct AdamConfig {
  S lr = S(1e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

template <class S>
struct AdamState {
  AdamConfig<S> cfg;
  long step = 0;
  // One moment buffer pair per parameter, in the order given at construction.
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;

  AdamState() = default;
  AdamState(AdamConfig<S> cfg_, const std::vector<Tensor<S>>& params) : cfg(cfg_) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.emplace_back(p.size(), S(0));
      v.emplace_back(p.size(), S(0));
    }
  }
};

// One Adam update over `params` using their accumulated gradients, then
// clears the gradients. Parameter order must match the state's construction.
template <class S>
void adam_step(AdamState<S>& st, std::vector<Tensor<S>>& params) {
  if (params.size() != st.m.size())
    throw ConfigError("adam_step: parameter list does not match optimizer state");
  st.step += 1;
  const double b1 = static_cast<double>(st.cfg.beta1);
  const double b2 = static_cast<double>(st.cfg.beta2);
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    p.impl()->ensure_grad();
    if (p.size() != st.m[pi].size())
      throw ConfigError("adam_step: parameter size changed since state creation");
    auto& mv = st.m[pi];
    auto& vv = st.v[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      const double gd = static_cast<double>(p.grad()[i]);
      double md = b1 * static_cast<double>(mv[i]) + (1.0 - b1) * gd;
      double vd = b2 * static_cast<double>(vv[i]) + (1.0 - b2) * gd * gd;
      mv[i] = static_cast<S>(md);
      vv[i] = static_cast<S>(vd);
      const double mhat = md / bc1;
      const double vhat = vd / bc2;
      p.values()[i] -= static_cast<S>(static_cast<double>(st.cfg.lr) * mhat /
                                      (std::sqrt(vhat) + static_cast<double>(st.cfg.eps)));
    }
    std::fill(p.grad().begin(), p.grad().end(), S(0));
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

struct GradCheckOptions {
  double step_scale = 1e-4;    // h = step_scale * max(1, |w|)
  int max_coords_per_param = 0;  // 0 = all coordinates
  double tolerance = 1e-3;     // relative-error threshold for pass/fail
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  long coords_checked = 0;
  std::string worst_param;
  bool deterministic = true;

  bool passed(double tol) const { return deterministic && max_rel_err < tol; }
};

// Compares reverse-mode gradients of `loss_fn` against central differences.
// `loss_fn` must rebuild the forward pass from scratch each call (same data,
// same RNG seeding) so that perturbing one weight is the only change.
template <class S>
GradCheckResult grad_check(const std::function<S()>& loss_fn,
                           const std::function<S()>& loss_and_backward_fn,
                           std::vector<std::pair<std::string, Tensor<S>>>& params,
                           const GradCheckOptions& opts = {}) {
  GradCheckResult res;

  // A stochastic closure (e.g. live dropout) makes finite differences
  // meaningless; flag it instead of reporting noise as gradient error.
  const S probe1 = loss_fn();
  const S probe2 = loss_fn();
  if (probe1 != probe2) {
    res.deterministic = false;
    return res;
  }

  for (auto& [name, p] : params) p.zero_grad();
  loss_and_backward_fn();
  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p.grad());

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    const size_t n = p.size();
    const size_t limit =
        opts.max_coords_per_param > 0
            ? std::min(n, static_cast<size_t>(opts.max_coords_per_param))
            : n;
    for (size_t i = 0; i < limit; ++i) {
      const S w0 = p.values()[i];
      const double h = opts.step_scale * std::max(1.0, std::abs(static_cast<double>(w0)));
      p.values()[i] = w0 + static_cast<S>(h);
      const double lp = static_cast<double>(loss_fn());
      p.values()[i] = w0 - static_cast<S>(h);
      const double lm = static_cast<double>(loss_fn());
      p.values()[i] = w0;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = static_cast<double>(analytic[pi][i]);
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      res.coords_checked += 1;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace timesiam
