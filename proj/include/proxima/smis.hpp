// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "proxima/recip.hpp"
#include "proxima/rng.hpp"

namespace proxima::smis {

// A 1D family of K overlapping techniques on [0,1]. Technique t places
// density beta on segment [t/K, (t+1)/K) and alpha elsewhere, normalized so
// that the uniform-prior marginal is identically 1:
//   (1/K) beta + (K-1)/K alpha = 1.
struct TechniqueSpace {
  int k = 5;
  double alpha = 0.1;
  double beta = 4.6;

  static TechniqueSpace from_alpha(int k, double alpha);
  void validate() const;

  int segment_of(double x) const;
  double conditional_pdf(double x, int t) const;
  double marginal_pdf(double x) const;
  double sample_conditional(int t, Rng& rng) const;
};

using Integrand = std::function<double(double)>;

// Estimate plus the consumed budget in cost units. A unit is one
// conditional-pdf evaluation or one technique/sample draw.
struct BenchEstimate {
  double estimate = 0.0;
  int64_t cost = 0;
};

// Balance-heuristic stochastic MIS over n technique draws:
//   sum_i f(x_i) / sum_j p(x_i | t_j).
// Costs n draws plus n^2 pdf evaluations.
BenchEstimate smis_estimate(const Integrand& f, const TechniqueSpace& space, int n, Rng& rng);

// Continuous MIS with the marginal replaced by an unbiased reciprocal
// estimate: f(x) * [estimate of 1 / p(x)], x from one uniformly chosen
// technique. The reciprocal walk runs over technique space with the uniform
// prior as support and B = beta.
BenchEstimate recip_cmis_estimate(const Integrand& f, const TechniqueSpace& space,
                                  const recip::ReciprocalConfig& cfg, Rng& rng);

struct BenchRow {
  std::string method;
  double alpha = 0.0;
  double beta = 0.0;
  std::string integrand;
  double variance = 0.0;
  double mean_cost = 0.0;
  double bias = 0.0;
};

struct BenchParams {
  int k = 5;
  std::vector<double> alphas = {0.1, 0.01};
  std::vector<std::string> methods = {"smis1", "smis4", "smis16", "recip"};
  std::vector<std::string> integrands = {"fA", "fB"};
  int64_t trials = 200000;
  uint64_t seed = 0;
};

// Named integrands: "one" (constant 1), "fA" (1 + 4 sin^2(pi x)) and "fB"
// (piecewise constant over the 5 segments with a 10x dynamic range).
Integrand named_integrand(const std::string& name);
double named_integral(const std::string& name);

std::vector<BenchRow> run_benchmark(const BenchParams& params);
std::string rows_to_csv(const std::vector<BenchRow>& rows);

}  // namespace proxima::smis
