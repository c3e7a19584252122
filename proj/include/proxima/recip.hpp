// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>

#include "proxima/rng.hpp"

namespace proxima::recip {

// Unbiased estimators for alpha = 1 / integral(f), built on the expansion
//   1/(B - A) = (1/B) * sum_n (A/B)^n,  A = B - integral(f),
// realized as a russian-roulette-and-splitting random walk over samples of a
// supporting distribution q. Each walk node draws x ~ q and scores
//   g(x) = 1 - f(x) / (B q(x)).
// The walk converges when integral(f)/B lies in (0,2); variance additionally
// requires E[|g|] < 1. B at or slightly above max(f/q) is the safe choice.

template <typename S>
using IntegrandOracle = std::function<double(const S&)>;

template <typename S>
struct SupportSampler {
  std::function<S(Rng&)> sample;
  std::function<double(const S&)> pdf;
};

enum class Mode { kMain, kSign, kBooth };

struct ReciprocalConfig {
  double bound = 1.0;             // B, must be positive
  int64_t recursion_cap = 10000;  // bounds both walk depth and total f evals per run
  Mode mode = Mode::kMain;
  double booth_r = 1.0;           // r parameter of the Booth continuation rule
};

struct ReciprocalRun {
  double estimate = 0.0;
  int64_t cost = 0;      // number of f/q evaluations consumed
  bool truncated = false;
};

// n with E[n] = r. Integer r is returned as-is without consuming randomness.
inline int64_t stochastic_split(double r, Rng& rng) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw std::runtime_error("stochastic_split: bad ratio");
  double fl = std::floor(r);
  double frac = r - fl;
  int64_t n = static_cast<int64_t>(fl);
  if (frac > 0.0 && rng.bernoulli(frac)) ++n;
  return n;
}

namespace detail {

template <typename S>
struct Walk {
  const IntegrandOracle<S>& f;
  const SupportSampler<S>& q;
  const ReciprocalConfig& cfg;
  Rng& rng;
  int64_t cost = 0;
  bool truncated = false;

  double draw_g() {
    S x = q.sample(rng);
    double qx = q.pdf(x);
    double fx = f(x);
    ++cost;
    if (!std::isfinite(fx) || fx < 0.0) throw std::runtime_error("reciprocal: integrand must be finite and non-negative");
    if (!std::isfinite(qx) || qx <= 0.0) throw std::runtime_error("reciprocal: support pdf must be finite and positive");
    return 1.0 - fx / (cfg.bound * qx);
  }

  bool guard(int64_t depth) {
    if (depth >= cfg.recursion_cap || cost >= cfg.recursion_cap) {
      truncated = true;
      return true;
    }
    return false;
  }

  // Estimates alpha - 1/B. Splitting with r = |g| leaves each child weighted
  // by exactly sign(g).
  double main_tree(int64_t depth) {
    if (guard(depth)) return 0.0;
    double g = draw_g();
    double ans = g / cfg.bound;
    double sgn = (g > 0.0) - (g < 0.0);
    int64_t n = stochastic_split(std::fabs(g), rng);
    for (int64_t i = 0; i < n; ++i) ans += sgn * main_tree(depth + 1);
    return ans;
  }

  // Estimates alpha directly; every node scores 1/B regardless of g.
  double sign_tree(int64_t depth) {
    if (guard(depth)) return 0.0;
    double g = draw_g();
    double ans = 1.0 / cfg.bound;
    double sgn = (g > 0.0) - (g < 0.0);
    int64_t n = stochastic_split(std::fabs(g), rng);
    for (int64_t i = 0; i < n; ++i) ans += sgn * sign_tree(depth + 1);
    return ans;
  }

  // Booth's rule: pure roulette, continuation min(1, prod|g_i| / r).
  double booth_chain() {
    double ans = 1.0 / cfg.bound;
    double w = 1.0;
    double prod_abs = 1.0;
    for (int64_t depth = 0;; ++depth) {
      if (guard(depth)) break;
      double g = draw_g();
      w *= g;
      prod_abs *= std::fabs(g);
      ans += w / cfg.bound;
      double pc = std::min(1.0, prod_abs / cfg.booth_r);
      if (!(rng.next_double() < pc)) break;
      w /= pc;
    }
    return ans;
  }
};

}  // namespace detail

template <typename S>
ReciprocalRun estimate_reciprocal(const IntegrandOracle<S>& f, const SupportSampler<S>& q,
                                  const ReciprocalConfig& cfg, Rng& rng) {
  if (!(cfg.bound > 0.0)) throw std::runtime_error("reciprocal: bound must be positive");
  detail::Walk<S> walk{f, q, cfg, rng};
  double est = 1.0 / cfg.bound + walk.main_tree(0);
  return {est, walk.cost, walk.truncated};
}

template <typename S>
ReciprocalRun estimate_reciprocal_sign(const IntegrandOracle<S>& f, const SupportSampler<S>& q,
                                       const ReciprocalConfig& cfg, Rng& rng) {
  if (!(cfg.bound > 0.0)) throw std::runtime_error("reciprocal: bound must be positive");
  detail::Walk<S> walk{f, q, cfg, rng};
  double est = walk.sign_tree(0);
  return {est, walk.cost, walk.truncated};
}

template <typename S>
ReciprocalRun booth_estimate(const IntegrandOracle<S>& f, const SupportSampler<S>& q,
                             const ReciprocalConfig& cfg, Rng& rng) {
  if (!(cfg.bound > 0.0)) throw std::runtime_error("reciprocal: bound must be positive");
  if (!(cfg.booth_r > 0.0)) throw std::runtime_error("reciprocal: booth_r must be positive");
  detail::Walk<S> walk{f, q, cfg, rng};
  double est = walk.booth_chain();
  return {est, walk.cost, walk.truncated};
}

template <typename S>
ReciprocalRun estimate(const IntegrandOracle<S>& f, const SupportSampler<S>& q,
                       const ReciprocalConfig& cfg, Rng& rng) {
  switch (cfg.mode) {
    case Mode::kSign: return estimate_reciprocal_sign(f, q, cfg, rng);
    case Mode::kBooth: return booth_estimate(f, q, cfg, rng);
    default: return estimate_reciprocal(f, q, cfg, rng);
  }
}

struct EfficiencyReport {
  double mean = 0.0;
  double variance = 0.0;
  double mean_cost = 0.0;
  double efficiency = 0.0;  // 1 / (variance * mean_cost)
  double truncated_fraction = 0.0;
  int64_t trials = 0;
};

// Welford accumulation over non-truncated runs; truncated runs still count
// toward cost and the truncation rate.
inline EfficiencyReport measure_efficiency(const std::function<ReciprocalRun(Rng&)>& runner,
                                           int64_t trials, Rng& rng) {
  if (trials < 2) throw std::runtime_error("measure_efficiency: need at least 2 trials");
  double mean = 0.0, m2 = 0.0;
  int64_t kept = 0, truncated = 0;
  double cost_sum = 0.0;
  for (int64_t i = 0; i < trials; ++i) {
    ReciprocalRun run = runner(rng);
    cost_sum += static_cast<double>(run.cost);
    if (run.truncated) {
      ++truncated;
      continue;
    }
    ++kept;
    double d = run.estimate - mean;
    mean += d / static_cast<double>(kept);
    m2 += d * (run.estimate - mean);
  }
  if (kept < 2) throw std::runtime_error("measure_efficiency: all runs truncated");
  EfficiencyReport rep;
  rep.trials = trials;
  rep.mean = mean;
  rep.variance = m2 / static_cast<double>(kept - 1);
  rep.mean_cost = cost_sum / static_cast<double>(trials);
  rep.truncated_fraction = static_cast<double>(truncated) / static_cast<double>(trials);
  rep.efficiency = rep.variance > 0.0 ? 1.0 / (rep.variance * rep.mean_cost)
                                      : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace proxima::recip
