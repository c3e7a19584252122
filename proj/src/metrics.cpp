// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <cmath>
#include <stdexcept>

#include "proxima/image.hpp"

namespace proxima {

MetricReport compare_images(const Image& estimate, const Image& reference) {
  if (estimate.width != reference.width || estimate.height != reference.height)
    throw std::runtime_error("compare: image dimensions differ");
  size_t n = reference.pixels.size();
  if (n == 0) throw std::runtime_error("compare: empty image");

  double ref_mean = 0.0;
  for (const Vec3& p : reference.pixels) ref_mean += luminance(p);
  ref_mean /= static_cast<double>(n);
  double eps = 1e-2 * ref_mean;

  MetricReport rep;
  rep.epsilon = eps;
  for (size_t i = 0; i < n; ++i) {
    double a = luminance(estimate.pixels[i]);
    double b = luminance(reference.pixels[i]);
    double diff = std::fabs(a - b);
    rep.mape += diff / std::max(b, eps);
    rep.smape += 2.0 * diff / std::max(a + b, eps);
    rep.mse += (a - b) * (a - b);
  }
  rep.mape /= static_cast<double>(n);
  rep.smape /= static_cast<double>(n);
  rep.mse /= static_cast<double>(n);
  return rep;
}

}  // namespace proxima
