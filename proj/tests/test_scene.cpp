// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "proxima/scene.hpp"

using namespace proxima;

namespace {

const char* kMinimalScene = R"({
  "materials": [
    {"name": "white", "base_color": [0.75, 0.75, 0.75], "roughness": 1.0},
    {"name": "lamp", "base_color": [0, 0, 0]}
  ],
  "primitives": [
    {"shape": "rectangle", "material": "white", "origin": [-1, 0, -1], "edge_u": [2, 0, 0], "edge_v": [0, 0, 2]},
    {"shape": "sphere", "material": "white", "center": [0, 1, 0], "radius": 0.5},
    {"shape": "triangle", "material": "white", "p0": [-1, 0, 1], "p1": [1, 0, 1], "p2": [0, 2, 1]},
    {"shape": "rectangle", "material": "lamp", "origin": [-0.25, 1.99, -0.25], "edge_u": [0.5, 0, 0], "edge_v": [0, 0, 0.5]}
  ],
  "emitters": [{"primitive": 3, "radiance": [10, 10, 10]}],
  "camera": {"position": [0, 1, 4], "look_at": [0, 1, 0], "fov_y": 40, "resolution": [32, 32]},
  "settings": {"max_depth": 6, "spp": 4}
})";

std::string patch(const std::string& body, const std::string& needle, const std::string& repl) {
  std::string s = body;
  s.replace(s.find(needle), needle.size(), repl);
  return s;
}

Vec3 uniform_sphere(Rng& rng) {
  double z = 1.0 - 2.0 * rng.next_double();
  double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  double phi = 2.0 * std::numbers::pi * rng.next_double();
  return {r * std::cos(phi), r * std::sin(phi), z};
}

}  // namespace

TEST_CASE("scene loads and derives areas") {
  Scene scene = load_scene_from_string(kMinimalScene);
  CHECK(scene.primitives.size() == 4);
  CHECK(scene.primitives[0].area() == doctest::Approx(4.0));
  CHECK(scene.primitives[1].area() == doctest::Approx(4.0 * std::numbers::pi * 0.25));
  CHECK(scene.primitives[2].area() == doctest::Approx(2.0));
  CHECK(scene.total_emitter_area == doctest::Approx(0.25));
  CHECK(scene.emitter_of_primitive[3] == 0);
  CHECK(scene.emitter_of_primitive[0] == -1);
}

TEST_CASE("validation failures carry specific messages") {
  auto expect_error = [](const std::string& body, const std::string& fragment) {
    try {
      load_scene_from_string(body);
      FAIL_CHECK("expected scene error containing: " << fragment);
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  expect_error(patch(kMinimalScene, "\"radius\": 0.5", "\"radius\": -1"), "radius");
  expect_error(patch(kMinimalScene, "\"emitters\": [{\"primitive\": 3, \"radiance\": [10, 10, 10]}]",
                     "\"emitters\": []"),
               "at least one emitter");
  expect_error(patch(kMinimalScene, "\"material\": \"lamp\"", "\"material\": \"nope\""),
               "unknown material");
  expect_error(patch(kMinimalScene, "\"fov_y\": 40", "\"fov_y\": 200"), "fov_y");
  expect_error(patch(kMinimalScene, "\"edge_u\": [0.5, 0, 0]", "\"edge_u\": [0, 0, 0]"),
               "degenerate");
  expect_error(patch(kMinimalScene, "{\"name\": \"lamp\", \"base_color\": [0, 0, 0]}",
                     "{\"name\": \"lamp\", \"transmission\": 1.0, \"ior\": 0.9}"),
               "ior must exceed 1");
}

TEST_CASE("ray intersections hit the expected primitives") {
  Scene scene = load_scene_from_string(kMinimalScene);
  auto hit = scene.intersect({{0, 1, 4}, {0, 0, -1}});
  REQUIRE(hit.has_value());
  CHECK(hit->primitive == 2);  // the triangle at z=1 shadows the sphere
  CHECK(hit->t == doctest::Approx(3.0));

  auto sphere_hit = scene.intersect({{0, 1, -4}, {0, 0, 1}});
  REQUIRE(sphere_hit.has_value());
  CHECK(sphere_hit->primitive == 1);
  CHECK(sphere_hit->t == doctest::Approx(3.5));
  CHECK(sphere_hit->n.z == doctest::Approx(-1.0));

  // Rectangle interior and just past its edge (edge vectors, not vertices).
  auto rect_hit = scene.intersect({{0.7, 2, -0.6}, {0, -1, 0}});
  REQUIRE(rect_hit.has_value());
  CHECK(rect_hit->primitive == 0);
  CHECK(rect_hit->t == doctest::Approx(2.0));
  CHECK(!scene.intersect({{1.2, 2, -0.6}, {0, -1, 0}}).has_value());

  auto floor_hit = scene.intersect({{0.5, 2, 0.5}, normalize(Vec3{0, -1, 0})});
  REQUIRE(floor_hit.has_value());
  CHECK(floor_hit->primitive == 0);
  CHECK(floor_hit->p.y == doctest::Approx(0.0));

  CHECK(!scene.intersect({{0, 5, 0}, {0, 1, 0}}).has_value());
  CHECK(scene.occluded({0, 1, 4}, {0, 1, -4}));
  CHECK(!scene.occluded({0, 1, 4}, {0, 1, 1}));
}

TEST_CASE("bvh agrees with the linear scan") {
  Scene bvh_scene, linear_scene;
  Rng rng(3, 0);
  Material white;
  white.name = "white";
  bvh_scene.materials.push_back(white);
  for (int i = 0; i < 200; ++i) {
    Primitive p;
    p.shape = Primitive::Shape::kSphere;
    p.a = Vec3(rng.next_double() * 10 - 5, rng.next_double() * 10 - 5, rng.next_double() * 10 - 5);
    p.radius = 0.1 + 0.4 * rng.next_double();
    bvh_scene.primitives.push_back(p);
  }
  linear_scene = bvh_scene;
  linear_scene.force_linear = true;
  Emitter em;
  em.primitive = 0;
  em.radiance = Vec3(1.0);
  bvh_scene.emitters.push_back(em);
  linear_scene.emitters.push_back(em);
  bvh_scene.finalize();
  linear_scene.finalize();

  int hits = 0;
  for (int i = 0; i < 2000; ++i) {
    Ray ray{Vec3(rng.next_double() * 16 - 8, rng.next_double() * 16 - 8, -12),
            normalize(Vec3(rng.next_double() - 0.5, rng.next_double() - 0.5, 1.0))};
    auto a = bvh_scene.intersect(ray);
    auto b = linear_scene.intersect(ray);
    REQUIRE(a.has_value() == b.has_value());
    if (a) {
      ++hits;
      CHECK(a->primitive == b->primitive);
      CHECK(a->t == doctest::Approx(b->t).epsilon(1e-12));
    }
  }
  CHECK(hits > 200);
}

TEST_CASE("light sampling is uniform by area across emitters") {
  std::string two_lights = patch(
      kMinimalScene, "\"emitters\": [{\"primitive\": 3, \"radiance\": [10, 10, 10]}]",
      "\"emitters\": [{\"primitive\": 3, \"radiance\": [10, 10, 10]}, {\"primitive\": 2, \"radiance\": [1, 1, 1]}]");
  Scene scene = load_scene_from_string(two_lights);
  double total = 0.25 + 2.0;
  CHECK(scene.total_emitter_area == doctest::Approx(total));
  Rng rng(4, 0);
  int on_triangle = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    LightPoint lp = scene.sample_light_point(rng);
    CHECK(lp.pdf_area == doctest::Approx(1.0 / total));
    if (lp.primitive == 2) {
      ++on_triangle;
      CHECK(lp.p.z == doctest::Approx(1.0));
    } else {
      CHECK(lp.p.y == doctest::Approx(1.99));
    }
  }
  CHECK(on_triangle / static_cast<double>(n) == doctest::Approx(2.0 / total).epsilon(0.01));
}

TEST_CASE("bsdf reciprocity for reflection lobes") {
  Rng rng(5, 0);
  Material lambert;
  lambert.base_color = Vec3(0.6, 0.4, 0.2);
  lambert.roughness = 1.0;
  Material metal;
  metal.base_color = Vec3(0.9, 0.7, 0.4);
  metal.metallic = 1.0;
  metal.roughness = 0.3;
  Vec3 n{0, 0, 1};
  for (int i = 0; i < 500; ++i) {
    Vec3 wi = uniform_sphere(rng);
    Vec3 wo = uniform_sphere(rng);
    wi.z = std::fabs(wi.z) + 0.05;
    wo.z = std::fabs(wo.z) + 0.05;
    wi = normalize(wi);
    wo = normalize(wo);
    for (const Material* m : {&lambert, &metal}) {
      Vec3 ab = eval_bsdf(*m, n, wi, wo);
      Vec3 ba = eval_bsdf(*m, n, wo, wi);
      CHECK(ab.x == doctest::Approx(ba.x).epsilon(1e-9));
      CHECK(ab.y == doctest::Approx(ba.y).epsilon(1e-9));
      CHECK(ab.z == doctest::Approx(ba.z).epsilon(1e-9));
    }
  }
}

TEST_CASE("pdf integrates to one over directions") {
  Rng rng(6, 0);
  Vec3 n{0, 0, 1};
  Vec3 wi = normalize(Vec3{0.4, 0.1, 0.9});

  Material lambert;
  lambert.roughness = 1.0;
  Material rough_metal;
  rough_metal.metallic = 1.0;
  rough_metal.roughness = 0.25;

  // Wide lobes: plain uniform-sphere Monte Carlo.
  for (const Material* m : {&lambert, &rough_metal}) {
    double sum = 0.0;
    const int nsamp = 8000000;
    for (int i = 0; i < nsamp; ++i) sum += pdf_bsdf(*m, n, wi, uniform_sphere(rng));
    double integral = sum / nsamp * 4.0 * std::numbers::pi;
    CHECK(integral == doctest::Approx(1.0).epsilon(0.01));
  }

  // Very rough reflection clips part of the lobe below the horizon. The pdf
  // must stay consistent with the sampler: the integral over valid directions
  // equals the acceptance rate of sample_bsdf.
  Material clipped;
  clipped.metallic = 1.0;
  clipped.roughness = 0.5;
  {
    double sum = 0.0;
    const int nsamp = 4000000;
    for (int i = 0; i < nsamp; ++i) sum += pdf_bsdf(clipped, n, wi, uniform_sphere(rng));
    double integral = sum / nsamp * 4.0 * std::numbers::pi;
    int valid = 0;
    const int tries = 400000;
    for (int i = 0; i < tries; ++i) valid += sample_bsdf(clipped, n, wi, rng).valid ? 1 : 0;
    double accept = double(valid) / tries;
    CHECK(integral > 0.90);
    CHECK(integral < 0.98);
    CHECK(integral == doctest::Approx(accept).epsilon(0.01));
  }

  // Narrow lobe: importance mixture of cosine and the sampler itself.
  Material smooth_metal;
  smooth_metal.metallic = 1.0;
  smooth_metal.roughness = 0.1;
  double sum = 0.0;
  const int nsamp = 400000;
  int taken = 0;
  for (int i = 0; i < nsamp; ++i) {
    Vec3 wo;
    if (rng.next_double() < 0.5) {
      wo = sample_cosine_hemisphere(n, rng);
    } else {
      auto bs = sample_bsdf(smooth_metal, n, wi, rng);
      if (!bs.valid) continue;
      wo = bs.wo;
    }
    double target = pdf_bsdf(smooth_metal, n, wi, wo);
    double mix = 0.5 * pdf_cosine_hemisphere(n, wo) + 0.5 * target;
    if (mix > 0.0) {
      sum += target / mix;
      ++taken;
    }
  }
  CHECK(sum / nsamp == doctest::Approx(1.0).epsilon(0.01));
  CHECK(taken > nsamp * 9 / 10);
}

TEST_CASE("ggx sampling matches the analytic pdf (chi-square)") {
  // Histogram of sampled wo around the mirror direction against bin masses
  // obtained by quadrature of pdf_bsdf. Exercises the sampler, the pdf and
  // the reflection Jacobian together.
  Rng rng(7, 0);
  Material metal;
  metal.metallic = 1.0;
  metal.roughness = 0.1;
  Vec3 n{0, 0, 1};
  Vec3 wi = normalize(Vec3{0.3, -0.2, 0.95});
  Vec3 mirror_dir = reflect(wi, n);
  Frame frame(mirror_dir);

  const int ntheta = 12, nphi = 6;
  const double theta_max = 0.25;  // radians, covers the lobe many times over
  auto theta_edge = [&](int i) {
    return theta_max * std::pow(static_cast<double>(i) / ntheta, 2.0);
  };

  std::vector<double> mass(ntheta * nphi, 0.0);
  for (int bt = 0; bt < ntheta; ++bt) {
    double t0 = theta_edge(bt), t1 = theta_edge(bt + 1);
    for (int bp = 0; bp < nphi; ++bp) {
      double p0 = 2.0 * std::numbers::pi * bp / nphi;
      double p1 = 2.0 * std::numbers::pi * (bp + 1) / nphi;
      const int sub = 24;
      double acc = 0.0;
      for (int i = 0; i < sub; ++i) {
        double theta = t0 + (i + 0.5) / sub * (t1 - t0);
        for (int j = 0; j < sub; ++j) {
          double phi = p0 + (j + 0.5) / sub * (p1 - p0);
          Vec3 wo = frame.to_world({std::sin(theta) * std::cos(phi),
                                    std::sin(theta) * std::sin(phi), std::cos(theta)});
          acc += pdf_bsdf(metal, n, wi, wo) * std::sin(theta);
        }
      }
      mass[bt * nphi + bp] = acc * (t1 - t0) * (p1 - p0) / (sub * sub);
    }
  }
  double region_mass = 0.0;
  for (double m : mass) region_mass += m;
  CHECK(region_mass > 0.95);  // the lobe is inside the binned cap

  const int nsamp = 400000;
  std::vector<int> counts(ntheta * nphi, 0);
  int in_region = 0;
  for (int i = 0; i < nsamp; ++i) {
    auto bs = sample_bsdf(metal, n, wi, rng);
    if (!bs.valid) continue;
    double ct = dot(bs.wo, mirror_dir);
    double theta = std::acos(std::min(1.0, ct));
    if (theta >= theta_max) continue;
    double phi = std::atan2(dot(bs.wo, frame.b), dot(bs.wo, frame.t));
    if (phi < 0.0) phi += 2.0 * std::numbers::pi;
    int bt = 0;
    while (bt + 1 < ntheta && theta_edge(bt + 1) <= theta) ++bt;
    int bp = std::min(static_cast<int>(phi / (2.0 * std::numbers::pi) * nphi), nphi - 1);
    ++counts[bt * nphi + bp];
    ++in_region;
  }
  double chi2 = 0.0;
  int dof = 0;
  for (int c = 0; c < ntheta * nphi; ++c) {
    double expected = in_region * mass[c] / region_mass;
    if (expected < 5.0) continue;
    chi2 += (counts[c] - expected) * (counts[c] - expected) / expected;
    ++dof;
  }
  CHECK(dof > 30);
  // 1e-4 critical value for up to 71 dof is below 140.
  CHECK(chi2 < 140.0);
}

TEST_CASE("near-mirror metal concentrates around the reflection") {
  Rng rng(8, 0);
  Material mirror;
  mirror.metallic = 1.0;
  mirror.roughness = 0.01;
  CHECK(is_specular(mirror));
  Vec3 n{0, 0, 1};
  Vec3 wi = normalize(Vec3{0.5, 0.0, 0.8});
  Vec3 mirror_dir = reflect(wi, n);
  int close = 0;
  const int nsamp = 20000;
  double cos5 = std::cos(5.0 * std::numbers::pi / 180.0);
  for (int i = 0; i < nsamp; ++i) {
    auto bs = sample_bsdf(mirror, n, wi, rng);
    if (bs.valid && dot(bs.wo, mirror_dir) > cos5) ++close;
  }
  CHECK(close > nsamp * 99 / 100);

  double peak = luminance(eval_bsdf(mirror, n, wi, mirror_dir));
  Vec3 off = normalize(mirror_dir + Vec3{0.5, 0, 0});
  CHECK(luminance(eval_bsdf(mirror, n, wi, off)) < 1e-4 * peak);
}

TEST_CASE("specular classification follows the roughness threshold") {
  Material m;
  m.metallic = 1.0;
  m.roughness = 0.19;
  CHECK(is_specular(m));
  m.roughness = 0.2;
  CHECK(!is_specular(m));
  m.metallic = 0.0;
  m.transmission = 1.0;
  m.roughness = 0.01;
  CHECK(is_specular(m));
  m.transmission = 0.0;
  CHECK(!is_specular(m));
}

TEST_CASE("glass refraction follows snell's law and conserves energy") {
  Rng rng(9, 0);
  Material glass;
  glass.base_color = Vec3(1.0);
  glass.transmission = 1.0;
  glass.roughness = 0.01;
  glass.ior = 1.5;
  Vec3 n{0, 0, 1};
  double theta_i = 45.0 * std::numbers::pi / 180.0;
  Vec3 wi{std::sin(theta_i), 0, std::cos(theta_i)};
  double expected_sin = std::sin(theta_i) / 1.5;

  int refracted = 0;
  for (int i = 0; i < 20000; ++i) {
    auto bs = sample_bsdf(glass, n, wi, rng);
    if (!bs.valid) continue;
    if (bs.wo.z < 0.0) {
      ++refracted;
      double sin_t = std::sqrt(std::max(0.0, 1.0 - bs.wo.z * bs.wo.z));
      CHECK(sin_t == doctest::Approx(expected_sin).epsilon(0.05));
    }
  }
  CHECK(refracted > 10000);  // F(45 deg, 1.5) is about 0.05

  // The transmission kernel is symmetric by construction; check it on
  // sampled refraction pairs from both sides.
  Material rough_glass = glass;
  rough_glass.roughness = 0.1;
  int checked = 0;
  for (int i = 0; i < 2000 && checked < 500; ++i) {
    Vec3 from = normalize(Vec3(rng.next_double() - 0.5, rng.next_double() - 0.5,
                               0.3 + rng.next_double()));
    if (rng.next_double() < 0.5) from.z = -from.z;
    auto bs = sample_bsdf(rough_glass, n, from, rng);
    if (!bs.valid || bs.wo.z * from.z >= 0.0) continue;
    double ab = luminance(eval_bsdf(rough_glass, n, from, bs.wo));
    double ba = luminance(eval_bsdf(rough_glass, n, bs.wo, from));
    CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked == 500);
}
