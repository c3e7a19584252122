// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "proxima/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace proxima {

namespace {

constexpr double kRayEps = 1e-7;
constexpr int kBvhThreshold = 64;

double sphere_hit(const Primitive& s, const Ray& ray, double t_max) {
  Vec3 oc = ray.origin - s.a;
  double b = dot(oc, ray.dir);
  double c = length_squared(oc) - s.radius * s.radius;
  double disc = b * b - c;
  if (disc < 0.0) return -1.0;
  double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < kRayEps) t = -b + sq;
  if (t < kRayEps || t > t_max) return -1.0;
  return t;
}

double triangle_hit(const Primitive& tr, const Ray& ray, double t_max, bool parallelogram) {
  Vec3 e1 = parallelogram ? tr.b : tr.b - tr.a;
  Vec3 e2 = parallelogram ? tr.c : tr.c - tr.a;
  Vec3 pv = cross(ray.dir, e2);
  double det = dot(e1, pv);
  if (std::fabs(det) < 1e-14) return -1.0;
  double inv = 1.0 / det;
  Vec3 tv = ray.origin - tr.a;
  double u = dot(tv, pv) * inv;
  if (u < 0.0 || u > 1.0) return -1.0;
  Vec3 qv = cross(tv, e1);
  double v = dot(ray.dir, qv) * inv;
  double hi = parallelogram ? 1.0 : 1.0 - u;
  if (v < 0.0 || v > hi) return -1.0;
  if (parallelogram && u > 1.0) return -1.0;
  double t = dot(e2, qv) * inv;
  if (t < kRayEps || t > t_max) return -1.0;
  return t;
}

double primitive_hit(const Primitive& p, const Ray& ray, double t_max) {
  switch (p.shape) {
    case Primitive::Shape::kSphere: return sphere_hit(p, ray, t_max);
    case Primitive::Shape::kTriangle: return triangle_hit(p, ray, t_max, false);
    case Primitive::Shape::kRectangle: return triangle_hit(p, ray, t_max, true);
  }
  return -1.0;
}

// For rectangles b,c are edges from a; for triangles they are vertices.
Vec3 primitive_normal(const Primitive& p, const Vec3& at) {
  switch (p.shape) {
    case Primitive::Shape::kSphere: return (at - p.a) / p.radius;
    case Primitive::Shape::kTriangle: return normalize(cross(p.b - p.a, p.c - p.a));
    case Primitive::Shape::kRectangle: return normalize(cross(p.b, p.c));
  }
  return {0, 0, 1};
}

void primitive_bounds(const Primitive& p, Vec3& lo, Vec3& hi) {
  switch (p.shape) {
    case Primitive::Shape::kSphere:
      lo = p.a - Vec3(p.radius);
      hi = p.a + Vec3(p.radius);
      return;
    case Primitive::Shape::kTriangle:
      lo = min(p.a, min(p.b, p.c));
      hi = max(p.a, max(p.b, p.c));
      return;
    case Primitive::Shape::kRectangle:
      lo = min(min(p.a, p.a + p.b), min(p.a + p.c, p.a + p.b + p.c));
      hi = max(max(p.a, p.a + p.b), max(p.a + p.c, p.a + p.b + p.c));
      return;
  }
}

bool box_hit(const Vec3& lo, const Vec3& hi, const Ray& ray, double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    double inv = 1.0 / ray.dir[a];
    double near = (lo[a] - ray.origin[a]) * inv;
    double far = (hi[a] - ray.origin[a]) * inv;
    if (near > far) std::swap(near, far);
    t0 = std::max(t0, near);
    t1 = std::min(t1, far);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

double Primitive::area() const {
  switch (shape) {
    case Shape::kSphere: return 4.0 * std::numbers::pi * radius * radius;
    case Shape::kTriangle: return 0.5 * length(cross(b - a, c - a));
    case Shape::kRectangle: return length(cross(b, c));
  }
  return 0.0;
}

Ray Camera::generate_ray(int px, int py, double u, double v) const {
  Vec3 fwd = normalize(look_at - position);
  Vec3 right = normalize(cross(fwd, up));
  Vec3 cam_up = cross(right, fwd);
  double tan_half = std::tan(fov_y * std::numbers::pi / 360.0);
  double aspect = static_cast<double>(width) / height;
  double sx = (2.0 * ((px + u) / width) - 1.0) * tan_half * aspect;
  double sy = (1.0 - 2.0 * ((py + v) / height)) * tan_half;
  return {position, normalize(fwd + sx * right + sy * cam_up)};
}

std::optional<Hit> Scene::intersect(const Ray& ray, double t_max) const {
  double t_best = t_max;
  int best = -1;
  if (!bvh_.empty()) {
    intersect_bvh(ray, 0, t_best, best);
  } else {
    for (size_t i = 0; i < primitives.size(); ++i) {
      double t = primitive_hit(primitives[i], ray, t_best);
      if (t > 0.0) {
        t_best = t;
        best = static_cast<int>(i);
      }
    }
  }
  if (best < 0) return std::nullopt;
  Hit hit;
  hit.t = t_best;
  hit.p = ray.origin + t_best * ray.dir;
  hit.primitive = best;
  hit.n = primitive_normal(primitives[best], hit.p);
  hit.material = primitives[best].material;
  hit.emitter = emitter_of_primitive[best];
  return hit;
}

void Scene::intersect_bvh(const Ray& ray, int node, double& t_best, int& best) const {
  const BvhNode& n = bvh_[node];
  if (!box_hit(n.bb_min, n.bb_max, ray, t_best)) return;
  if (n.count > 0) {
    for (int i = 0; i < n.count; ++i) {
      int prim = bvh_order_[n.first + i];
      double t = primitive_hit(primitives[prim], ray, t_best);
      if (t > 0.0) {
        t_best = t;
        best = prim;
      }
    }
    return;
  }
  intersect_bvh(ray, n.left, t_best, best);
  intersect_bvh(ray, n.right, t_best, best);
}

bool Scene::occluded(const Vec3& from, const Vec3& to) const {
  Vec3 d = to - from;
  double dist = length(d);
  if (dist < kRayEps) return false;
  Ray ray{from, d / dist};
  auto hit = intersect(ray, dist * (1.0 - 1e-6));
  return hit.has_value();
}

LightPoint Scene::sample_light_point(Rng& rng) const {
  double target = rng.next_double() * total_emitter_area;
  size_t chosen = 0;
  double acc = 0.0;
  for (size_t i = 0; i < emitters.size(); ++i) {
    acc += primitives[emitters[i].primitive].area();
    if (target < acc || i + 1 == emitters.size()) {
      chosen = i;
      break;
    }
  }
  const Emitter& em = emitters[chosen];
  const Primitive& prim = primitives[em.primitive];
  LightPoint lp;
  lp.radiance = em.radiance;
  lp.primitive = em.primitive;
  lp.pdf_area = 1.0 / total_emitter_area;
  switch (prim.shape) {
    case Primitive::Shape::kSphere: {
      double z = 1.0 - 2.0 * rng.next_double();
      double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      double phi = 2.0 * std::numbers::pi * rng.next_double();
      Vec3 n{r * std::cos(phi), r * std::sin(phi), z};
      lp.p = prim.a + prim.radius * n;
      lp.n = n;
      break;
    }
    case Primitive::Shape::kTriangle: {
      double u = rng.next_double(), v = rng.next_double();
      if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
      }
      lp.p = prim.a + u * (prim.b - prim.a) + v * (prim.c - prim.a);
      lp.n = primitive_normal(prim, lp.p);
      break;
    }
    case Primitive::Shape::kRectangle: {
      lp.p = prim.a + rng.next_double() * prim.b + rng.next_double() * prim.c;
      lp.n = primitive_normal(prim, lp.p);
      break;
    }
  }
  return lp;
}

Vec3 Scene::emitted(int emitter, const Vec3& n, const Vec3& dir_out) const {
  if (emitter < 0 || dot(dir_out, n) <= 0.0) return Vec3(0.0);
  return emitters[emitter].radiance;
}

Vec3 Scene::emitted(const Hit& hit, const Vec3& dir_out) const {
  return emitted(hit.emitter, hit.n, dir_out);
}

void Scene::finalize() {
  emitter_of_primitive.assign(primitives.size(), -1);
  total_emitter_area = 0.0;
  for (size_t i = 0; i < emitters.size(); ++i) {
    emitter_of_primitive[emitters[i].primitive] = static_cast<int>(i);
    total_emitter_area += primitives[emitters[i].primitive].area();
  }
  bbox_min = Vec3(1e30);
  bbox_max = Vec3(-1e30);
  for (const Primitive& p : primitives) {
    Vec3 lo, hi;
    primitive_bounds(p, lo, hi);
    bbox_min = min(bbox_min, lo);
    bbox_max = max(bbox_max, hi);
  }
  bvh_.clear();
  bvh_order_.clear();
  if (!force_linear && primitives.size() > kBvhThreshold) build_bvh();
}

void Scene::build_bvh() {
  bvh_order_.resize(primitives.size());
  for (size_t i = 0; i < primitives.size(); ++i) bvh_order_[i] = static_cast<int>(i);

  struct Builder {
    Scene& scene;
    int build(int first, int count) {
      Scene::BvhNode node;
      node.bb_min = Vec3(1e30);
      node.bb_max = Vec3(-1e30);
      for (int i = 0; i < count; ++i) {
        Vec3 lo, hi;
        primitive_bounds(scene.primitives[scene.bvh_order_[first + i]], lo, hi);
        node.bb_min = min(node.bb_min, lo);
        node.bb_max = max(node.bb_max, hi);
      }
      int index = static_cast<int>(scene.bvh_.size());
      scene.bvh_.push_back(node);
      if (count <= 4) {
        scene.bvh_[index].first = first;
        scene.bvh_[index].count = count;
        return index;
      }
      Vec3 extent = node.bb_max - node.bb_min;
      int axis = extent.x > extent.y ? (extent.x > extent.z ? 0 : 2) : (extent.y > extent.z ? 1 : 2);
      auto mid = scene.bvh_order_.begin() + first + count / 2;
      std::nth_element(scene.bvh_order_.begin() + first, mid,
                       scene.bvh_order_.begin() + first + count, [&](int lhs, int rhs) {
                         Vec3 la, lb, ra, rb;
                         primitive_bounds(scene.primitives[lhs], la, lb);
                         primitive_bounds(scene.primitives[rhs], ra, rb);
                         return la[axis] + lb[axis] < ra[axis] + rb[axis];
                       });
      int left = build(first, count / 2);
      int right = build(first + count / 2, count - count / 2);
      scene.bvh_[index].left = left;
      scene.bvh_[index].right = right;
      return index;
    }
  };
  Builder{*this}.build(0, static_cast<int>(primitives.size()));
}

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("scene: " + msg); }

Vec3 get_vec3(const json& j, const std::string& key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3)
    fail("expected 3-vector for '" + key + "'");
  return {j[key][0].get<double>(), j[key][1].get<double>(), j[key][2].get<double>()};
}

double get_unit(const json& j, const std::string& key, double fallback) {
  double v = j.value(key, fallback);
  if (v < 0.0 || v > 1.0) fail("'" + key + "' must lie in [0,1]");
  return v;
}

}  // namespace

Scene load_scene_from_string(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("invalid JSON: ") + e.what());
  }

  Scene scene;
  std::vector<std::string> material_names;
  if (!root.contains("materials") || root["materials"].empty()) fail("no materials defined");
  for (const json& jm : root["materials"]) {
    Material m;
    m.name = jm.value("name", "");
    if (m.name.empty()) fail("material without a name");
    if (jm.contains("base_color")) m.base_color = get_vec3(jm, "base_color");
    m.metallic = get_unit(jm, "metallic", 0.0);
    m.roughness = get_unit(jm, "roughness", 0.5);
    m.transmission = get_unit(jm, "transmission", 0.0);
    m.ior = jm.value("ior", 1.5);
    if (m.transmission > 0.0 && m.ior <= 1.0) fail("ior must exceed 1");
    scene.materials.push_back(m);
    material_names.push_back(m.name);
  }

  auto material_index = [&](const std::string& name) {
    for (size_t i = 0; i < material_names.size(); ++i)
      if (material_names[i] == name) return static_cast<int>(i);
    fail("unknown material '" + name + "'");
    return -1;
  };

  if (!root.contains("primitives") || root["primitives"].empty()) fail("no primitives defined");
  for (const json& jp : root["primitives"]) {
    Primitive p;
    std::string shape = jp.value("shape", "");
    p.material = material_index(jp.value("material", ""));
    if (shape == "sphere") {
      p.shape = Primitive::Shape::kSphere;
      p.a = get_vec3(jp, "center");
      p.radius = jp.value("radius", 0.0);
      if (p.radius <= 0.0) fail("sphere radius must be positive");
    } else if (shape == "triangle") {
      p.shape = Primitive::Shape::kTriangle;
      p.a = get_vec3(jp, "p0");
      p.b = get_vec3(jp, "p1");
      p.c = get_vec3(jp, "p2");
      if (p.area() <= 0.0) fail("degenerate triangle");
    } else if (shape == "rectangle") {
      p.shape = Primitive::Shape::kRectangle;
      p.a = get_vec3(jp, "origin");
      p.b = get_vec3(jp, "edge_u");
      p.c = get_vec3(jp, "edge_v");
      if (p.area() <= 0.0) fail("degenerate rectangle");
    } else {
      fail("unknown shape '" + shape + "'");
    }
    scene.primitives.push_back(p);
  }

  if (!root.contains("emitters") || root["emitters"].empty())
    fail("scene must contain at least one emitter");
  for (const json& je : root["emitters"]) {
    Emitter e;
    e.primitive = je.value("primitive", -1);
    if (e.primitive < 0 || e.primitive >= static_cast<int>(scene.primitives.size()))
      fail("emitter references unknown primitive");
    e.radiance = get_vec3(je, "radiance");
    if (e.radiance.x < 0.0 || e.radiance.y < 0.0 || e.radiance.z < 0.0)
      fail("emitter radiance must be non-negative");
    scene.emitters.push_back(e);
  }

  if (!root.contains("camera")) fail("no camera defined");
  const json& jc = root["camera"];
  for (const auto& item : jc.items()) {
    const std::string& key = item.key();
    if (key != "position" && key != "look_at" && key != "up" && key != "fov_y" &&
        key != "resolution")
      fail("unknown camera key '" + key + "'");
  }
  scene.camera.position = get_vec3(jc, "position");
  scene.camera.look_at = get_vec3(jc, "look_at");
  if (jc.contains("up")) scene.camera.up = get_vec3(jc, "up");
  scene.camera.fov_y = jc.value("fov_y", 45.0);
  if (scene.camera.fov_y <= 0.0 || scene.camera.fov_y >= 180.0)
    fail("fov_y must lie in (0,180)");
  if (jc.contains("resolution")) {
    scene.camera.width = jc["resolution"][0].get<int>();
    scene.camera.height = jc["resolution"][1].get<int>();
  }
  if (scene.camera.width <= 0 || scene.camera.height <= 0) fail("resolution must be positive");
  if (length(scene.camera.look_at - scene.camera.position) < 1e-12)
    fail("camera look_at coincides with position");

  if (root.contains("settings")) {
    const json& js = root["settings"];
    for (const auto& item : js.items()) {
      const std::string& key = item.key();
      if (key != "max_depth" && key != "spp" && key != "seed")
        fail("unknown settings key '" + key + "'");
    }
    scene.settings.max_depth = js.value("max_depth", 8);
    scene.settings.spp = js.value("spp", 16);
    scene.settings.seed = js.value("seed", uint64_t{0});
    if (scene.settings.max_depth < 1) fail("max_depth must be at least 1");
    if (scene.settings.spp < 1) fail("spp must be at least 1");
  }

  scene.finalize();
  return scene;
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return load_scene_from_string(buf.str());
}

}  // namespace proxima
