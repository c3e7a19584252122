// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "proxima/transport.hpp"

#include <cmath>
#include <numbers>

#include "proxima/bsdf.hpp"

namespace proxima {

namespace {

constexpr double kPi = std::numbers::pi;

bool near_zero(const Vec3& v) { return v.x == 0.0 && v.y == 0.0 && v.z == 0.0; }

VertexFlag surface_flag(const Material& m) {
  return is_specular(m) ? VertexFlag::kSpecular : VertexFlag::kDiffuse;
}

PathVertex surface_vertex(const Scene& scene, const Hit& hit, const Vec3& wi) {
  PathVertex v;
  v.p = hit.p;
  v.n = hit.n;
  v.wi = wi;
  v.material = &scene.materials[hit.material];
  v.primitive = hit.primitive;
  v.emitter = hit.emitter;
  v.flag = surface_flag(*v.material);
  return v;
}

// Extends a walk by BSDF sampling until the vertex budget is exhausted or the
// walk escapes the scene. Shared by light and eye sub-paths.
void extend_walk(const Scene& scene, SubPath& sp, Vec3 beta, Vec3 dir,
                 double pdf_dir, int max_vertices, Rng& rng) {
  while (static_cast<int>(sp.vertices.size()) < max_vertices) {
    const PathVertex& prev = sp.vertices.back();
    auto hit = scene.intersect({prev.p, dir});
    if (!hit) break;
    PathVertex v = surface_vertex(scene, *hit, -dir);
    v.pdf_fwd = to_area_density(pdf_dir, prev.p, v.p, v.n);
    v.throughput = beta;
    sp.vertices.push_back(v);
    if (static_cast<int>(sp.vertices.size()) >= max_vertices) break;

    BsdfSample bs = sample_bsdf(*v.material, v.n, v.wi, rng);
    if (!bs.valid || bs.pdf <= 0.0) break;
    beta = beta * bs.value * (std::fabs(dot(bs.wo, v.n)) / bs.pdf);
    if (near_zero(beta)) break;
    dir = bs.wo;
    pdf_dir = bs.pdf;
  }
}

// Directional density used when leaving an emitter: cosine on the +n side.
double light_direction_pdf(const Vec3& n, const Vec3& d) {
  double c = dot(n, d);
  return c > 0.0 ? c / kPi : 0.0;
}

struct JunctionValue {
  Vec3 f_light;  // emission (s = 1) or BSDF at the light endpoint
  Vec3 f_eye;    // BSDF at the eye endpoint
  bool valid = false;
};

JunctionValue junction_kernels(const FullPath& path, const Scene& scene) {
  JunctionValue jv;
  const PathVertex& y = path.light.back();
  const PathVertex& z = path.eye.back();
  if (z.flag != VertexFlag::kDiffuse) return jv;
  Vec3 d = z.p - y.p;
  double len = length(d);
  if (len <= 0.0) return jv;
  Vec3 dir = d / len;
  if (path.s == 1) {
    jv.f_light = scene.emitted(y.emitter, y.n, dir);
  } else {
    if (y.flag != VertexFlag::kDiffuse) return jv;
    jv.f_light = eval_bsdf(*y.material, y.n, y.wi, dir);
  }
  jv.f_eye = eval_bsdf(*z.material, z.n, z.wi, -dir);
  jv.valid = true;
  return jv;
}

}  // namespace

double to_area_density(double pdf_solid_angle, const Vec3& from, const Vec3& to,
                       const Vec3& n_to) {
  Vec3 d = to - from;
  double dist2 = dot(d, d);
  if (dist2 <= 0.0) return 0.0;
  double cos_to = std::fabs(dot(n_to, d)) / std::sqrt(dist2);
  return pdf_solid_angle * cos_to / dist2;
}

double to_solid_angle_density(double pdf_area, const Vec3& from, const Vec3& to,
                              const Vec3& n_to) {
  Vec3 d = to - from;
  double dist2 = dot(d, d);
  if (dist2 <= 0.0) return 0.0;
  double cos_to = std::fabs(dot(n_to, d)) / std::sqrt(dist2);
  if (cos_to <= 0.0) return 0.0;
  return pdf_area * dist2 / cos_to;
}

SubPath trace_light_subpath(const Scene& scene, int max_vertices, Rng& rng) {
  SubPath sp;
  sp.kind = SubPathKind::kLight;
  if (max_vertices < 1) return sp;

  LightPoint lp = scene.sample_light_point(rng);
  PathVertex y0;
  y0.p = lp.p;
  y0.n = lp.n;
  y0.material = &scene.materials[scene.primitives[lp.primitive].material];
  y0.primitive = lp.primitive;
  y0.emitter = scene.emitter_of_primitive[lp.primitive];
  y0.flag = VertexFlag::kLight;
  y0.pdf_fwd = lp.pdf_area;
  y0.throughput = Vec3(1.0 / lp.pdf_area);
  sp.vertices.push_back(y0);
  if (max_vertices == 1) return sp;

  Vec3 d = sample_cosine_hemisphere(lp.n, rng);
  double pdf_dir = light_direction_pdf(lp.n, d);
  if (pdf_dir <= 0.0) return sp;
  Vec3 beta = y0.throughput * lp.radiance * (dot(d, lp.n) / pdf_dir);
  extend_walk(scene, sp, beta, d, pdf_dir, max_vertices, rng);
  return sp;
}

SubPath trace_eye_subpath(const Scene& scene, int px, int py, int max_vertices,
                          Rng& rng) {
  SubPath sp;
  sp.kind = SubPathKind::kEye;
  if (max_vertices < 1) return sp;

  PathVertex z0;
  z0.p = scene.camera.position;
  z0.n = Vec3(0.0);
  z0.flag = VertexFlag::kCamera;
  z0.pdf_fwd = 1.0;
  z0.throughput = Vec3(1.0);
  sp.vertices.push_back(z0);
  if (max_vertices == 1) return sp;

  Ray ray = scene.camera.generate_ray(px, py, rng.next_double(), rng.next_double());
  auto hit = scene.intersect(ray);
  if (!hit) return sp;
  PathVertex z1 = surface_vertex(scene, *hit, -ray.dir);
  z1.pdf_fwd = 1.0;
  z1.throughput = Vec3(1.0);
  sp.vertices.push_back(z1);
  if (max_vertices == 2) return sp;

  BsdfSample bs = sample_bsdf(*z1.material, z1.n, z1.wi, rng);
  if (!bs.valid || bs.pdf <= 0.0) return sp;
  Vec3 beta = bs.value * (std::fabs(dot(bs.wo, z1.n)) / bs.pdf);
  extend_walk(scene, sp, beta, bs.wo, bs.pdf, max_vertices, rng);
  return sp;
}

double geometry_term(const PathVertex& a, const PathVertex& b, const Scene& scene) {
  Vec3 d = b.p - a.p;
  double dist2 = dot(d, d);
  if (dist2 <= 0.0) return 0.0;
  Vec3 dir = d / std::sqrt(dist2);
  double g = std::fabs(dot(a.n, dir)) * std::fabs(dot(b.n, dir)) / dist2;
  if (g <= 0.0) return 0.0;
  return scene.visible(a.p, b.p) ? g : 0.0;
}

FullPath make_full_path(const SubPath& light, int s, const SubPath& eye, int t) {
  FullPath fp;
  fp.light.assign(light.vertices.begin(), light.vertices.begin() + s);
  fp.eye.assign(eye.vertices.begin(), eye.vertices.begin() + t);
  fp.s = s;
  fp.t = t;
  return fp;
}

Vec3 connection_contribution(const FullPath& path, const Scene& scene) {
  if (path.s < 1 || path.t < 2) return Vec3(0.0);
  JunctionValue jv = junction_kernels(path, scene);
  if (!jv.valid || near_zero(jv.f_light) || near_zero(jv.f_eye)) return Vec3(0.0);
  const PathVertex& y = path.light.back();
  const PathVertex& z = path.eye.back();
  double g = geometry_term(y, z, scene);
  if (g <= 0.0) return Vec3(0.0);
  return y.throughput * jv.f_light * g * jv.f_eye * z.throughput;
}

Vec3 connection_contribution(const SubPath& light, const SubPath& eye,
                             const Scene& scene) {
  return connection_contribution(
      make_full_path(light, static_cast<int>(light.vertices.size()), eye,
                     static_cast<int>(eye.vertices.size())),
      scene);
}

double strategy_pdf(const FullPath& path, int s, int t, const Scene& scene) {
  int n_v = path.s + path.t;
  if (s < 0 || t < 2 || s + t != n_v) return 0.0;

  auto vertex = [&](int i) -> const PathVertex& {
    return i < path.s ? path.light[i] : path.eye[n_v - 1 - i];
  };

  if (s >= 1) {
    if (vertex(s).flag != VertexFlag::kDiffuse) return 0.0;
    if (s >= 2 && vertex(s - 1).flag != VertexFlag::kDiffuse) return 0.0;
    if (vertex(0).emitter < 0) return 0.0;
  }

  auto bsdf_step = [&](int at, int from, int to) -> double {
    const PathVertex& v = vertex(at);
    Vec3 wi = normalize(vertex(from).p - v.p);
    Vec3 wo_dir = vertex(to).p - v.p;
    double len = length(wo_dir);
    if (len <= 0.0) return 0.0;
    double pdf_w = pdf_bsdf(*v.material, v.n, wi, wo_dir / len);
    return to_area_density(pdf_w, v.p, vertex(to).p, vertex(to).n);
  };

  double p = 1.0;
  if (s >= 1) p *= 1.0 / scene.total_emitter_area;
  if (s >= 2) {
    const PathVertex& y0 = vertex(0);
    Vec3 d = vertex(1).p - y0.p;
    double len = length(d);
    if (len <= 0.0) return 0.0;
    double pdf_w = light_direction_pdf(y0.n, d / len);
    if (pdf_w <= 0.0) return 0.0;
    p *= to_area_density(pdf_w, y0.p, vertex(1).p, vertex(1).n);
  }
  for (int i = 2; i < s; ++i) {
    double step = bsdf_step(i - 1, i - 2, i);
    if (step <= 0.0) return 0.0;
    p *= step;
  }
  // Eye side: the camera vertex and the primary hit carry unit density.
  for (int j = n_v - 3; j >= s; --j) {
    double step = bsdf_step(j + 1, j + 2, j);
    if (step <= 0.0) return 0.0;
    p *= step;
  }
  return p;
}

double balance_mis_weight(const FullPath& path, int s, int t, const Scene& scene) {
  double current = strategy_pdf(path, s, t, scene);
  if (current <= 0.0) return 0.0;
  int n_v = path.s + path.t;
  double denom = 0.0;
  for (int sp = 0; sp <= n_v - 2; ++sp) denom += strategy_pdf(path, sp, n_v - sp, scene);
  return current / denom;
}

Vec3 eye_hit_emission(const SubPath& eye, int t, const Scene& scene) {
  const PathVertex& z = eye.vertices[t - 1];
  if (z.emitter < 0) return Vec3(0.0);
  return z.throughput * scene.emitted(z.emitter, z.n, z.wi);
}

namespace {

Vec3 pt_radiance(const Scene& scene, int px, int py, Rng& rng) {
  const int max_depth = scene.settings.max_depth;
  Ray ray = scene.camera.generate_ray(px, py, rng.next_double(), rng.next_double());
  Vec3 radiance(0.0);
  Vec3 beta(1.0);
  bool from_delta = true;  // camera rays and specular bounces take emission unweighted
  double prev_pdf_w = 0.0;
  Vec3 prev_p;

  for (int depth = 1; depth <= max_depth; ++depth) {
    auto hit = scene.intersect(ray);
    if (!hit) break;
    const Material& mat = scene.materials[hit->material];
    Vec3 wi = -ray.dir;

    Vec3 le = scene.emitted(*hit, wi);
    if (!near_zero(le)) {
      if (from_delta) {
        radiance += beta * le;
      } else {
        double p_hit = to_area_density(prev_pdf_w, prev_p, hit->p, hit->n);
        double p_nee = 1.0 / scene.total_emitter_area;
        radiance += beta * le * (p_hit / (p_hit + p_nee));
      }
    }
    if (depth == max_depth) break;

    bool specular = is_specular(mat);
    if (!specular) {
      LightPoint lp = scene.sample_light_point(rng);
      Vec3 d = lp.p - hit->p;
      double dist2 = dot(d, d);
      if (dist2 > 0.0) {
        Vec3 dir = d / std::sqrt(dist2);
        Vec3 le_nee = scene.emitted(scene.emitter_of_primitive[lp.primitive], lp.n, -dir);
        if (!near_zero(le_nee)) {
          Vec3 f = eval_bsdf(mat, hit->n, wi, dir);
          if (!near_zero(f) && scene.visible(hit->p, lp.p)) {
            double g = std::fabs(dot(hit->n, dir)) * std::fabs(dot(lp.n, dir)) / dist2;
            double p_bsdf = to_area_density(pdf_bsdf(mat, hit->n, wi, dir), hit->p,
                                            lp.p, lp.n);
            double w = lp.pdf_area / (lp.pdf_area + p_bsdf);
            radiance += beta * f * le_nee * (g * w / lp.pdf_area);
          }
        }
      }
    }

    BsdfSample bs = sample_bsdf(mat, hit->n, wi, rng);
    if (!bs.valid || bs.pdf <= 0.0) break;
    beta = beta * bs.value * (std::fabs(dot(bs.wo, hit->n)) / bs.pdf);
    if (near_zero(beta)) break;
    from_delta = specular;
    prev_pdf_w = bs.pdf;
    prev_p = hit->p;
    ray = {hit->p, bs.wo};
  }
  return radiance;
}

Vec3 bdpt_radiance(const Scene& scene, int px, int py, Rng& rng) {
  const int max_depth = scene.settings.max_depth;
  SubPath eye = trace_eye_subpath(scene, px, py, max_depth + 1, rng);
  SubPath light = trace_light_subpath(scene, max_depth - 1, rng);

  Vec3 radiance(0.0);
  int n_eye = static_cast<int>(eye.vertices.size());
  int n_light = static_cast<int>(light.vertices.size());
  for (int t = 2; t <= n_eye; ++t) {
    Vec3 le = eye_hit_emission(eye, t, scene);
    if (!near_zero(le)) {
      FullPath fp = make_full_path(light, 0, eye, t);
      radiance += le * balance_mis_weight(fp, 0, t, scene);
    }
    for (int s = 1; s <= n_light && s + t <= max_depth + 1; ++s) {
      FullPath fp = make_full_path(light, s, eye, t);
      Vec3 c = connection_contribution(fp, scene);
      if (near_zero(c)) continue;
      radiance += c * balance_mis_weight(fp, s, t, scene);
    }
  }
  return radiance;
}

template <typename PixelEstimator>
Image render_image(const Scene& scene, int spp, uint64_t seed,
                   const PixelEstimator& estimate) {
  if (spp <= 0) spp = scene.settings.spp;
  Image img(scene.camera.width, scene.camera.height);
  for (int y = 0; y < scene.camera.height; ++y) {
    for (int x = 0; x < scene.camera.width; ++x) {
      Rng rng(seed, static_cast<uint64_t>(y) * scene.camera.width + x);
      Vec3 acc(0.0);
      for (int s = 0; s < spp; ++s) acc += estimate(x, y, rng);
      img.at(x, y) = acc / double(spp);
    }
  }
  return img;
}

}  // namespace

Image render_pt(const Scene& scene, int spp, uint64_t seed) {
  return render_image(scene, spp, seed, [&](int x, int y, Rng& rng) {
    return pt_radiance(scene, x, y, rng);
  });
}

Image render_bdpt(const Scene& scene, int spp, uint64_t seed) {
  return render_image(scene, spp, seed, [&](int x, int y, Rng& rng) {
    return bdpt_radiance(scene, x, y, rng);
  });
}

}  // namespace proxima
