// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "proxima/image.hpp"
#include "proxima/rng.hpp"
#include "proxima/scene.hpp"

namespace proxima {

enum class VertexFlag { kLight, kDiffuse, kSpecular, kCamera };

struct PathVertex {
  Vec3 p;
  Vec3 n;                    // outward geometric normal; zero for the camera
  Vec3 wi;                   // unit direction toward the previous vertex
  const Material* material = nullptr;
  int primitive = -1;
  int emitter = -1;
  VertexFlag flag = VertexFlag::kDiffuse;
  double pdf_fwd = 0.0;      // area-measure density with which it was traced
  Vec3 throughput{1, 1, 1};  // accumulated f/p up to this vertex
};

enum class SubPathKind { kLight, kEye };

struct SubPath {
  std::vector<PathVertex> vertices;
  SubPathKind kind = SubPathKind::kEye;
};

// Full path stored light-to-eye: light[0..s-1] then eye[t-1..0]. The camera
// vertex and the primary hit carry unit density by convention; those factors
// are common to every strategy of a pixel and cancel in all weight ratios.
struct FullPath {
  std::vector<PathVertex> light;  // y0 .. y_{s-1}
  std::vector<PathVertex> eye;    // z0 .. z_{t-1}
  int s = 0;
  int t = 0;
};

// Solid-angle <-> area measure conversion for a density at `to` as seen from
// `from`; n_to is the surface normal at `to`.
double to_area_density(double pdf_solid_angle, const Vec3& from, const Vec3& to,
                       const Vec3& n_to);
double to_solid_angle_density(double pdf_area, const Vec3& from, const Vec3& to,
                              const Vec3& n_to);

// Random walks. max_vertices bounds the number of vertices in the sub-path.
// Light walks start on an area-sampled emitter point and leave it through a
// cosine-distributed direction on the emitting side; eye walks start at the
// camera through a jittered pixel ray. No Russian roulette.
SubPath trace_light_subpath(const Scene& scene, int max_vertices, Rng& rng);
SubPath trace_eye_subpath(const Scene& scene, int px, int py, int max_vertices,
                          Rng& rng);

// |cos a||cos b| / d^2 when mutually visible, else zero.
double geometry_term(const PathVertex& a, const PathVertex& b, const Scene& scene);

FullPath make_full_path(const SubPath& light, int s, const SubPath& eye, int t);

// Value of joining the two sub-paths at their end vertices: stored light
// throughput x (emission or junction BSDF) x geometry x junction BSDF x
// stored eye throughput. Zero if a junction endpoint is specular.
Vec3 connection_contribution(const SubPath& light, const SubPath& eye,
                             const Scene& scene);
Vec3 connection_contribution(const FullPath& path, const Scene& scene);

// Area-measure density of generating this path with the split (s, t):
// s light-traced vertices and t eye-traced vertices. Zero when the split is
// impossible (junction at a specular vertex, first vertex off the emitters,
// or a vanishing directional density along either walk).
double strategy_pdf(const FullPath& path, int s, int t, const Scene& scene);

// strategy_pdf(s, t) normalised over every feasible split of the same path.
double balance_mis_weight(const FullPath& path, int s, int t, const Scene& scene);

// Radiance gathered when the eye walk itself lands on an emitter (the s = 0
// strategy): stored throughput times one-sided emission.
Vec3 eye_hit_emission(const SubPath& eye, int t, const Scene& scene);

// Baseline renderers. Deterministic for a fixed seed: every pixel owns an
// RNG stream derived from (seed, pixel index). spp <= 0 uses scene settings.
Image render_pt(const Scene& scene, int spp, uint64_t seed);
Image render_bdpt(const Scene& scene, int spp, uint64_t seed);

}  // namespace proxima
