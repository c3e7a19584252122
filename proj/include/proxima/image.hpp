// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "proxima/vec.hpp"

namespace proxima {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<Vec3> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h) {}

  Vec3& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
  const Vec3& at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

// PFM, color variant: "PF", dimensions, negative scale for little-endian,
// rows bottom-up, 32-bit floats.
void write_pfm(const Image& img, const std::string& path);
Image read_pfm(const std::string& path);

// 8-bit RGB preview with gamma 2.2.
void write_png(const Image& img, const std::string& path);

struct MetricReport {
  double mape = 0.0;
  double smape = 0.0;
  double mse = 0.0;
  double epsilon = 0.0;  // floor used by the relative metrics
};

// Relative metrics over pixel luminance against a reference. The floor is
// 1e-2 times the mean reference luminance, which makes MAPE and SMAPE
// invariant under a common exposure scale.
MetricReport compare_images(const Image& estimate, const Image& reference);

}  // namespace proxima
