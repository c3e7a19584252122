// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "proxima/bsdf.hpp"
#include "proxima/rng.hpp"
#include "proxima/vec.hpp"

namespace proxima {

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
};

struct Primitive {
  enum class Shape { kSphere, kTriangle, kRectangle };
  Shape shape = Shape::kSphere;
  int material = 0;
  // sphere: a = center, radius; triangle: a,b,c vertices;
  // rectangle: a = origin, b,c = edge vectors.
  Vec3 a, b, c;
  double radius = 1.0;

  double area() const;
};

struct Emitter {
  int primitive = -1;
  Vec3 radiance;  // constant, emitted from the +normal side only
};

struct Camera {
  Vec3 position;
  Vec3 look_at{0, 0, -1};
  Vec3 up{0, 1, 0};
  double fov_y = 45.0;  // degrees
  int width = 64;
  int height = 64;

  // (px,py) pixel index, (u,v) jitter in [0,1).
  Ray generate_ray(int px, int py, double u, double v) const;
};

struct Settings {
  int max_depth = 8;  // maximum number of path segments
  int spp = 16;
  uint64_t seed = 0;
};

struct Hit {
  double t = 0.0;
  Vec3 p;
  Vec3 n;  // outward geometric normal
  int primitive = -1;
  int material = 0;
  int emitter = -1;
};

struct LightPoint {
  Vec3 p;
  Vec3 n;
  Vec3 radiance;
  int primitive = -1;
  double pdf_area = 0.0;  // 1 / total emitter area
};

struct Scene {
  std::vector<Material> materials;
  std::vector<Primitive> primitives;
  std::vector<Emitter> emitters;
  Camera camera;
  Settings settings;

  std::vector<int> emitter_of_primitive;  // -1 when not an emitter
  double total_emitter_area = 0.0;
  Vec3 bbox_min, bbox_max;
  bool force_linear = false;  // skip BVH regardless of primitive count

  std::optional<Hit> intersect(const Ray& ray, double t_max = 1e30) const;
  bool occluded(const Vec3& from, const Vec3& to) const;
  bool visible(const Vec3& from, const Vec3& to) const { return !occluded(from, to); }

  // Uniform by area across all emitters.
  LightPoint sample_light_point(Rng& rng) const;
  // Radiance leaving an emitter surface point in direction dir_out (unit,
  // pointing away from the surface); zero on the back side.
  Vec3 emitted(int emitter, const Vec3& n, const Vec3& dir_out) const;
  Vec3 emitted(const Hit& hit, const Vec3& dir_out) const;

  void finalize();  // builds lookup tables, bbox and the BVH when needed

 private:
  struct BvhNode {
    Vec3 bb_min, bb_max;
    int left = -1, right = -1;
    int first = 0, count = 0;
  };
  std::vector<BvhNode> bvh_;
  std::vector<int> bvh_order_;
  void build_bvh();
  void intersect_bvh(const Ray& ray, int node, double& t_best, int& best) const;
};

// Parses and validates the JSON scene description. Throws std::runtime_error
// with a human-readable message on any violation.
Scene load_scene(const std::string& path);
Scene load_scene_from_string(const std::string& text);

}  // namespace proxima
