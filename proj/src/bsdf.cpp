// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "proxima/bsdf.hpp"

#include <cmath>
#include <numbers>

namespace proxima {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMinCos = 1e-9;

struct LobeWeights {
  double diffuse, metal, transmit;
};

LobeWeights lobes(const Material& m) {
  return {(1.0 - m.metallic) * (1.0 - m.transmission), m.metallic,
          (1.0 - m.metallic) * m.transmission};
}

double ggx_d(double alpha, double cos_h) {
  if (cos_h <= 0.0) return 0.0;
  double a2 = alpha * alpha;
  double t = cos_h * cos_h * (a2 - 1.0) + 1.0;
  return a2 / (kPi * t * t);
}

double smith_g1(double alpha, double cos_v) {
  double c = std::fabs(cos_v);
  double a2 = alpha * alpha;
  return 2.0 * c / (c + std::sqrt(a2 + (1.0 - a2) * c * c));
}

Vec3 schlick(const Vec3& f0, double cos_h) {
  double m = 1.0 - cos_h;
  double m2 = m * m;
  return f0 + (Vec3(1.0) - f0) * (m2 * m2 * m);
}

double fresnel_dielectric(double cos_i, double eta_rel) {
  cos_i = std::fabs(cos_i);
  double sin2_t = (1.0 - cos_i * cos_i) / (eta_rel * eta_rel);
  if (sin2_t >= 1.0) return 1.0;
  double cos_t = std::sqrt(1.0 - sin2_t);
  double r_par = (eta_rel * cos_i - cos_t) / (eta_rel * cos_i + cos_t);
  double r_perp = (cos_i - eta_rel * cos_t) / (cos_i + eta_rel * cos_t);
  return 0.5 * (r_par * r_par + r_perp * r_perp);
}

// Visible-normal sampling (Heitz 2018); density G1(wi) dot(wi,h) D(h)/cos_i.
Vec3 sample_ggx_half(double alpha, const Vec3& ns, const Vec3& wi, Rng& rng) {
  Frame frame(ns);
  Vec3 v = frame.to_local(wi);
  Vec3 vh = normalize(Vec3(alpha * v.x, alpha * v.y, v.z));
  double lensq = vh.x * vh.x + vh.y * vh.y;
  Vec3 t1 = lensq > 1e-18 ? Vec3(-vh.y, vh.x, 0.0) / std::sqrt(lensq) : Vec3(1, 0, 0);
  Vec3 t2 = cross(vh, t1);
  double r = std::sqrt(rng.next_double());
  double phi = 2.0 * kPi * rng.next_double();
  double p1 = r * std::cos(phi);
  double p2 = r * std::sin(phi);
  double s = 0.5 * (1.0 + vh.z);
  p2 = (1.0 - s) * std::sqrt(std::max(0.0, 1.0 - p1 * p1)) + s * p2;
  Vec3 nh = p1 * t1 + p2 * t2 + std::sqrt(std::max(0.0, 1.0 - p1 * p1 - p2 * p2)) * vh;
  Vec3 h = normalize(Vec3(alpha * nh.x, alpha * nh.y, std::max(1e-9, nh.z)));
  return frame.to_world(h);
}

double pdf_ggx_visible(double alpha, double cos_i, double cos_h, double wi_h) {
  if (wi_h <= 0.0 || cos_h <= 0.0 || cos_i <= 0.0) return 0.0;
  return smith_g1(alpha, cos_i) * wi_h * ggx_d(alpha, cos_h) / cos_i;
}

struct Geo {
  Vec3 ns;          // normal on the wi side
  double cos_i;     // dot(ns, wi), positive
  double cos_o;     // dot(ns, wo), signed
  bool entering;    // wi on the outward side of the surface
  double eta_i, eta_t;
};

bool setup(const Material& m, const Vec3& n, const Vec3& wi, const Vec3& wo, Geo& g) {
  g.entering = dot(n, wi) >= 0.0;
  g.ns = g.entering ? n : -n;
  g.cos_i = dot(g.ns, wi);
  g.cos_o = dot(g.ns, wo);
  g.eta_i = g.entering ? 1.0 : m.ior;
  g.eta_t = g.entering ? m.ior : 1.0;
  return g.cos_i > kMinCos;
}

}  // namespace

double ggx_alpha(double roughness) {
  return std::max(roughness * roughness, 1e-8);
}

Vec3 eval_bsdf(const Material& m, const Vec3& n, const Vec3& wi, const Vec3& wo) {
  Geo g;
  if (!setup(m, n, wi, wo, g)) return Vec3(0.0);
  LobeWeights w = lobes(m);
  double alpha = ggx_alpha(m.roughness);
  Vec3 value(0.0);

  if (g.cos_o > kMinCos) {
    if (w.diffuse > 0.0) value += w.diffuse / kPi * m.base_color;
    if (w.metal > 0.0 || w.transmit > 0.0) {
      Vec3 h = normalize(wi + wo);
      double d = ggx_d(alpha, dot(h, g.ns));
      double gg = smith_g1(alpha, g.cos_i) * smith_g1(alpha, g.cos_o);
      double spec = d * gg / (4.0 * g.cos_i * g.cos_o);
      if (w.metal > 0.0) value += w.metal * spec * schlick(m.base_color, dot(wi, h));
      if (w.transmit > 0.0)
        value += w.transmit * spec * fresnel_dielectric(dot(wi, h), g.eta_t / g.eta_i);
    }
  } else if (g.cos_o < -kMinCos && w.transmit > 0.0) {
    Vec3 h = g.eta_i * wi + g.eta_t * wo;
    double hl = length(h);
    if (hl > 1e-12) {
      h = h / hl;
      if (dot(h, g.ns) < 0.0) h = -h;
      double wi_h = dot(wi, h);
      double wo_h = dot(wo, h);
      if (wi_h > 0.0 && wo_h < 0.0) {
        double d = ggx_d(alpha, dot(h, g.ns));
        double gg = smith_g1(alpha, g.cos_i) * smith_g1(alpha, g.cos_o);
        double f = fresnel_dielectric(wi_h, g.eta_t / g.eta_i);
        double denom = g.eta_i * wi_h + g.eta_t * wo_h;
        double ft = std::fabs(wi_h * wo_h / (g.cos_i * g.cos_o)) * (1.0 - f) * d * gg /
                    (denom * denom);
        value += w.transmit * ft * m.base_color;
      }
    }
  }
  return value;
}

double pdf_bsdf(const Material& m, const Vec3& n, const Vec3& wi, const Vec3& wo) {
  Geo g;
  if (!setup(m, n, wi, wo, g)) return 0.0;
  LobeWeights w = lobes(m);
  double alpha = ggx_alpha(m.roughness);
  double pdf = 0.0;

  if (g.cos_o > kMinCos) {
    if (w.diffuse > 0.0) pdf += w.diffuse * g.cos_o / kPi;
    if (w.metal > 0.0 || w.transmit > 0.0) {
      Vec3 h = normalize(wi + wo);
      double pdf_h = pdf_ggx_visible(alpha, g.cos_i, dot(h, g.ns), dot(wi, h));
      double pdf_reflect = pdf_h / (4.0 * std::fabs(dot(wo, h)));
      if (w.metal > 0.0) pdf += w.metal * pdf_reflect;
      if (w.transmit > 0.0)
        pdf += w.transmit * fresnel_dielectric(dot(wi, h), g.eta_t / g.eta_i) * pdf_reflect;
    }
  } else if (g.cos_o < -kMinCos && w.transmit > 0.0) {
    Vec3 h = g.eta_i * wi + g.eta_t * wo;
    double hl = length(h);
    if (hl > 1e-12) {
      h = h / hl;
      if (dot(h, g.ns) < 0.0) h = -h;
      double wi_h = dot(wi, h);
      double wo_h = dot(wo, h);
      if (wi_h > 0.0 && wo_h < 0.0) {
        double pdf_h = pdf_ggx_visible(alpha, g.cos_i, dot(h, g.ns), wi_h);
        double f = fresnel_dielectric(wi_h, g.eta_t / g.eta_i);
        double denom = g.eta_i * wi_h + g.eta_t * wo_h;
        double jac = g.eta_t * g.eta_t * std::fabs(wo_h) / (denom * denom);
        pdf += w.transmit * (1.0 - f) * pdf_h * jac;
      }
    }
  }
  return pdf;
}

BsdfSample sample_bsdf(const Material& m, const Vec3& n, const Vec3& wi, Rng& rng) {
  BsdfSample out;
  Geo g;
  if (!setup(m, n, wi, wi, g)) return out;
  LobeWeights w = lobes(m);
  double alpha = ggx_alpha(m.roughness);

  double u = rng.next_double();
  Vec3 wo;
  if (u < w.diffuse) {
    wo = sample_cosine_hemisphere(g.ns, rng);
  } else if (u < w.diffuse + w.metal) {
    Vec3 h = sample_ggx_half(alpha, g.ns, wi, rng);
    wo = reflect(wi, h);
    if (dot(wo, g.ns) <= kMinCos) return out;
  } else if (w.transmit > 0.0) {
    Vec3 h = sample_ggx_half(alpha, g.ns, wi, rng);
    double wi_h = dot(wi, h);
    if (wi_h <= kMinCos) return out;
    double f = fresnel_dielectric(wi_h, g.eta_t / g.eta_i);
    if (rng.next_double() < f) {
      wo = reflect(wi, h);
      if (dot(wo, g.ns) <= kMinCos) return out;
    } else {
      double eta_rel = g.eta_i / g.eta_t;
      double sin2_t = eta_rel * eta_rel * (1.0 - wi_h * wi_h);
      if (sin2_t >= 1.0) return out;
      double cos_t = std::sqrt(1.0 - sin2_t);
      wo = normalize(-eta_rel * wi + (eta_rel * wi_h - cos_t) * h);
      if (dot(wo, g.ns) >= -kMinCos) return out;
    }
  } else {
    return out;
  }

  out.wo = wo;
  out.pdf = pdf_bsdf(m, n, wi, wo);
  out.value = eval_bsdf(m, n, wi, wo);
  out.valid = out.pdf > 0.0 && is_finite(out.value);
  return out;
}

Vec3 sample_cosine_hemisphere(const Vec3& n, Rng& rng) {
  double u1 = rng.next_double();
  double u2 = rng.next_double();
  double r = std::sqrt(u1);
  double phi = 2.0 * kPi * u2;
  double z = std::sqrt(std::max(0.0, 1.0 - u1));
  return Frame(n).to_world({r * std::cos(phi), r * std::sin(phi), z});
}

double pdf_cosine_hemisphere(const Vec3& n, const Vec3& w) {
  double c = dot(n, w);
  return c > 0.0 ? c / kPi : 0.0;
}

}  // namespace proxima
