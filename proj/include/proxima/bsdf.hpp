// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <string>

#include "proxima/rng.hpp"
#include "proxima/vec.hpp"

namespace proxima {

struct Material {
  std::string name;
  Vec3 base_color = Vec3(0.8);
  double metallic = 0.0;
  double roughness = 0.5;
  double transmission = 0.0;
  double ior = 1.5;
};

// A vertex is specular when a metallic or transmissive lobe dominates and the
// microfacet lobe is narrow. Specular vertices get zero value and zero pdf at
// connection junctions; tracing through them stays finite because the narrow
// lobe is a roughness-0.01 GGX, never an analytic delta.
inline bool is_specular(const Material& m) {
  return (m.metallic >= 0.5 || m.transmission >= 0.5) && m.roughness < 0.2;
}

// Directions point away from the surface; wi faces the previous vertex, wo
// the next. n is the outward geometric normal of the primitive. Values are
// kernels without cosine factors, pdfs are per solid angle of wo.
//
// The transmission lobe omits the radiance-compression eta^2 factor so the
// kernel is symmetric in wi/wo; every integrator here estimates the same
// symmetric path integral.
//
// Microfacet reflection can land below the horizon; such samples are rejected
// and carry zero pdf, so a rough lobe integrates to its acceptance rate
// rather than exactly one. pdf_bsdf is always the density of the samples
// sample_bsdf actually returns, which is the property the estimators use.
Vec3 eval_bsdf(const Material& m, const Vec3& n, const Vec3& wi, const Vec3& wo);
double pdf_bsdf(const Material& m, const Vec3& n, const Vec3& wi, const Vec3& wo);

struct BsdfSample {
  Vec3 wo;
  Vec3 value;         // kernel value at wo
  double pdf = 0.0;   // full mixture pdf of wo
  bool valid = false;
};

BsdfSample sample_bsdf(const Material& m, const Vec3& n, const Vec3& wi, Rng& rng);

// Hemisphere helpers shared with the light tracer and the proxy sampler.
Vec3 sample_cosine_hemisphere(const Vec3& n, Rng& rng);
double pdf_cosine_hemisphere(const Vec3& n, const Vec3& w);

double ggx_alpha(double roughness);

}  // namespace proxima
