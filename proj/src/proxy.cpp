// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "proxima/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "proxima/bsdf.hpp"
#include "proxima/recip.hpp"

namespace proxima {

namespace {

constexpr double kPi = std::numbers::pi;

bool near_zero(const Vec3& v) { return v.x == 0.0 && v.y == 0.0 && v.z == 0.0; }

bool specular_material(const PathVertex& v) {
  return v.material != nullptr && is_specular(*v.material);
}

// Directional density of leaving an emitter surface: cosine on the +n side,
// matching the light tracer.
double emitter_direction_pdf(const Vec3& n, const Vec3& d) {
  double c = dot(n, d);
  return c > 0.0 ? c / kPi : 0.0;
}

// Two-sided cosine density over the full sphere. The supporting walk leaves
// the specular endpoint on either side, so reflected and transmitted blocks
// are both covered and the target-to-support ratio stays bounded.
double sphere_cosine_pdf(const Vec3& n, const Vec3& d) {
  return std::fabs(dot(n, d)) / (2.0 * kPi);
}

Vec3 sample_sphere_cosine(const Vec3& n, Rng& rng) {
  Vec3 axis = rng.next_double() < 0.5 ? n : -n;
  return sample_cosine_hemisphere(axis, rng);
}

PathVertex vertex_from_hit(const Scene& scene, const Hit& hit, const Vec3& wi) {
  PathVertex v;
  v.p = hit.p;
  v.n = hit.n;
  v.wi = wi;
  v.material = &scene.materials[hit.material];
  v.primitive = hit.primitive;
  v.emitter = hit.emitter;
  v.flag = specular_material(v) ? VertexFlag::kSpecular : VertexFlag::kDiffuse;
  return v;
}

}  // namespace

std::optional<IncompleteLightSubPath> dropout(const SubPath& light,
                                              const SubspaceMapper& mapper) {
  const auto& v = light.vertices;
  const int n = static_cast<int>(v.size());
  if (light.kind != SubPathKind::kLight || n < 2) return std::nullopt;
  if (v[n - 1].flag != VertexFlag::kSpecular) return std::nullopt;

  // Length of the trailing specular run, endpoint included. It never reaches
  // the first vertex because light walks start on a light-flagged vertex, so
  // a non-specular terminal below the run always exists.
  int u = 0;
  while (u < n && v[n - 1 - u].flag == VertexFlag::kSpecular) ++u;
  if (u < 1 || u > 4) return std::nullopt;
  const int terminal = n - 1 - u;

  IncompleteLightSubPath inc;
  inc.u = u;
  inc.specular_end = v[n - 1];
  for (int i = n - 2; i >= terminal; --i) inc.dropped_flags.push_back(v[i].flag);
  inc.prefix.assign(v.begin(), v.begin() + terminal);
  if (!inc.prefix.empty()) {
    const PathVertex& hc = inc.prefix.back();
    // The retained data may only depend on the block through the emitter
    // constraint: a control vertex off the emitters is not eligible.
    if (hc.emitter < 0) return std::nullopt;
    if (inc.prefix.size() >= 2) inc.control_dir = -hc.wi;
  } else if (v[terminal].flag != VertexFlag::kLight) {
    return std::nullopt;
  }
  inc.prefix_pdf = 1.0;
  for (const PathVertex& pv : inc.prefix) inc.prefix_pdf *= pv.pdf_fwd;
  if (!(inc.prefix_pdf > 0.0)) return std::nullopt;
  inc.s_label = mapper.classify_specular(inc.specular_end);
  inc.c_label = mapper.classify_control(inc.control(), inc.control_dir);
  return inc;
}

SubPath repair(const IncompleteLightSubPath& incomplete,
               const std::vector<PathVertex>& g) {
  SubPath sp;
  sp.kind = SubPathKind::kLight;
  sp.vertices = incomplete.prefix;
  for (int i = static_cast<int>(g.size()) - 1; i >= 0; --i) sp.vertices.push_back(g[i]);
  sp.vertices.push_back(incomplete.specular_end);
  return sp;
}

double target_density(const IncompleteLightSubPath& incomplete,
                      const std::vector<PathVertex>& g, const Scene& scene) {
  const int u = incomplete.u;
  if (static_cast<int>(g.size()) != u || u < 1) return 0.0;
  // Class pattern of the dropped originals: the blocks adjacent to the
  // specular endpoint are specular, the terminal one is not, and a dropped
  // light start must lie on an emitter.
  for (int i = 0; i + 1 < u; ++i)
    if (!specular_material(g[i])) return 0.0;
  if (specular_material(g[u - 1])) return 0.0;
  const PathVertex* hc = incomplete.control();
  if (hc == nullptr && g[u - 1].emitter < 0) return 0.0;

  // Light-order chain: [control] g_u ... g_1 endpoint.
  std::vector<const PathVertex*> chain;
  if (hc) chain.push_back(hc);
  for (int i = u - 1; i >= 0; --i) chain.push_back(&g[i]);
  chain.push_back(&incomplete.specular_end);

  double f = hc ? 1.0 : 1.0 / scene.total_emitter_area;
  {
    const PathVertex& a = *chain[0];
    const PathVertex& b = *chain[1];
    Vec3 d = b.p - a.p;
    double len = length(d);
    if (len <= 0.0) return 0.0;
    Vec3 dir = d / len;
    double pdf_w = (!hc || !incomplete.control_dir)
                       ? emitter_direction_pdf(a.n, dir)
                       : pdf_bsdf(*a.material, a.n, -(*incomplete.control_dir), dir);
    if (pdf_w <= 0.0 || !scene.visible(a.p, b.p)) return 0.0;
    f *= to_area_density(pdf_w, a.p, b.p, b.n);
  }
  for (size_t k = 1; k + 1 < chain.size(); ++k) {
    const PathVertex& a = *chain[k];
    const PathVertex& b = *chain[k + 1];
    Vec3 wi = normalize(chain[k - 1]->p - a.p);
    Vec3 d = b.p - a.p;
    double len = length(d);
    if (len <= 0.0) return 0.0;
    double pdf_w = pdf_bsdf(*a.material, a.n, wi, d / len);
    if (pdf_w <= 0.0 || !scene.visible(a.p, b.p)) return 0.0;
    f *= to_area_density(pdf_w, a.p, b.p, b.n);
  }
  return f;
}

double support_pdf(const IncompleteLightSubPath& incomplete,
                   const std::vector<PathVertex>& g, const Scene& scene) {
  const int u = incomplete.u;
  if (static_cast<int>(g.size()) != u || u < 1) return 0.0;
  const PathVertex* hc = incomplete.control();
  const PathVertex& y = incomplete.specular_end;

  // Endpoint-tracing strand, defined for every configuration: a two-sided
  // cosine step out of the specular endpoint, then BSDF steps.
  double q_fs = 1.0;
  {
    const PathVertex* before = nullptr;
    const PathVertex* prev = &y;
    for (int j = 0; j < u; ++j) {
      const PathVertex& nxt = g[j];
      Vec3 d = nxt.p - prev->p;
      double len = length(d);
      if (len <= 0.0) {
        q_fs = 0.0;
        break;
      }
      Vec3 dir = d / len;
      double pdf_w = (j == 0)
                         ? sphere_cosine_pdf(y.n, dir)
                         : pdf_bsdf(*prev->material, prev->n,
                                    normalize(before->p - prev->p), dir);
      if (pdf_w <= 0.0 || !scene.visible(prev->p, nxt.p)) {
        q_fs = 0.0;
        break;
      }
      q_fs *= to_area_density(pdf_w, prev->p, nxt.p, nxt.n);
      before = prev;
      prev = &nxt;
    }
  }
  if (u > 1) return q_fs;

  // Single-vertex blocks mix the endpoint strand with either light-surface
  // sampling (dropped light start) or one tracing step out of the control.
  double q_other = 0.0;
  if (hc == nullptr) {
    if (g[0].emitter >= 0) q_other = 1.0 / scene.total_emitter_area;
  } else {
    Vec3 d = g[0].p - hc->p;
    double len = length(d);
    if (len > 0.0) {
      Vec3 dir = d / len;
      double pdf_w = incomplete.control_dir
                         ? pdf_bsdf(*hc->material, hc->n,
                                    -(*incomplete.control_dir), dir)
                         : emitter_direction_pdf(hc->n, dir);
      if (pdf_w > 0.0 && scene.visible(hc->p, g[0].p))
        q_other = to_area_density(pdf_w, hc->p, g[0].p, g[0].n);
    }
  }
  return 0.5 * (q_other + q_fs);
}

SupportCandidate support_sample(const IncompleteLightSubPath& incomplete,
                                const Scene& scene, Rng& rng) {
  SupportCandidate cand;
  const int u = incomplete.u;
  if (u < 1) return cand;
  cand.valid = true;
  const PathVertex* hc = incomplete.control();
  const PathVertex& y = incomplete.specular_end;

  auto escape = [&cand]() -> SupportCandidate& {
    cand.escaped = true;
    cand.q = 1.0;
    return cand;
  };

  const int strand = (u == 1) ? static_cast<int>(rng.next_below(2)) : 0;
  if (strand == 1 && hc == nullptr) {
    LightPoint lp = scene.sample_light_point(rng);
    PathVertex v;
    v.p = lp.p;
    v.n = lp.n;
    v.material = &scene.materials[scene.primitives[lp.primitive].material];
    v.primitive = lp.primitive;
    v.emitter = scene.emitter_of_primitive[lp.primitive];
    v.flag = VertexFlag::kLight;
    cand.g.push_back(v);
  } else if (strand == 1) {
    Vec3 dir;
    if (incomplete.control_dir) {
      BsdfSample bs = sample_bsdf(*hc->material, hc->n, -(*incomplete.control_dir), rng);
      if (!bs.valid || bs.pdf <= 0.0) return escape();
      dir = bs.wo;
    } else {
      dir = sample_cosine_hemisphere(hc->n, rng);
    }
    auto hit = scene.intersect({hc->p, dir});
    if (!hit) return escape();
    cand.g.push_back(vertex_from_hit(scene, *hit, -dir));
  } else {
    const PathVertex* prev = &y;
    for (int j = 0; j < u; ++j) {
      Vec3 dir;
      if (j == 0) {
        dir = sample_sphere_cosine(y.n, rng);
      } else {
        BsdfSample bs = sample_bsdf(*prev->material, prev->n, prev->wi, rng);
        if (!bs.valid || bs.pdf <= 0.0) return escape();
        dir = bs.wo;
      }
      auto hit = scene.intersect({prev->p, dir});
      if (!hit) return escape();
      cand.g.push_back(vertex_from_hit(scene, *hit, -dir));
      prev = &cand.g.back();
    }
  }
  cand.q = support_pdf(incomplete, cand.g, scene);
  if (!(cand.q > 0.0)) return escape();
  return cand;
}

RetraceResult retrace_proxy(const IncompleteLightSubPath& incomplete,
                            const PathVertex& eye_end, const Scene& scene, Rng& rng) {
  RetraceResult rr;
  const int u = incomplete.u;
  if (u < 1 || static_cast<int>(incomplete.dropped_flags.size()) != u) return rr;
  Vec3 d0 = eye_end.p - incomplete.specular_end.p;
  double l0 = length(d0);
  if (l0 <= 0.0) return rr;

  const PathVertex* cur = &incomplete.specular_end;
  Vec3 wi = d0 / l0;  // the specular endpoint is lit from the eye side
  double density = 1.0;
  std::vector<PathVertex> g;
  g.reserve(u);
  for (int step = 0; step < u; ++step) {
    BsdfSample bs = sample_bsdf(*cur->material, cur->n, wi, rng);
    if (!bs.valid || bs.pdf <= 0.0) return rr;
    auto hit = scene.intersect({cur->p, bs.wo});
    if (!hit) return rr;
    PathVertex v = vertex_from_hit(scene, *hit, -bs.wo);
    density *= to_area_density(bs.pdf, cur->p, v.p, v.n);
    const bool terminal = step == u - 1;
    if (!terminal) {
      if (!specular_material(v)) return rr;  // class mismatch with the originals
    } else {
      if (specular_material(v)) return rr;
      if (incomplete.dropped_flags.back() == VertexFlag::kLight) {
        if (v.emitter < 0) return rr;
        v.flag = VertexFlag::kLight;
      }
    }
    v.pdf_fwd = to_area_density(bs.pdf, cur->p, v.p, v.n);
    g.push_back(v);
    wi = g.back().wi;
    cur = &g.back();
  }
  if (!(density > 0.0)) return rr;
  // Re-orient the stored incident directions to light order (toward the
  // previous light-order vertex), mirroring traced sub-paths.
  for (int j = 0; j + 1 < u; ++j) g[j].wi = normalize(g[j + 1].p - g[j].p);
  const PathVertex* hc = incomplete.control();
  g[u - 1].wi = hc ? normalize(hc->p - g[u - 1].p) : Vec3(0.0);

  rr.path.vertices = std::move(g);
  rr.path.terminal_on_emitter = rr.path.vertices.back().emitter >= 0;
  rr.density = density;
  rr.accepted = true;
  return rr;
}

ProxyPdfComponents proxy_pdf_components(const IncompleteLightSubPath& incomplete,
                                        const std::vector<PathVertex>& g,
                                        const PathVertex& eye_end,
                                        const Scene& scene) {
  ProxyPdfComponents out;
  const auto& pre = incomplete.prefix;
  double pp = 1.0;
  if (!pre.empty()) {
    pp = 1.0 / scene.total_emitter_area;
    if (pre.size() >= 2) {
      Vec3 d = pre[1].p - pre[0].p;
      double len = length(d);
      pp = len > 0.0 ? pp * to_area_density(emitter_direction_pdf(pre[0].n, d / len),
                                            pre[0].p, pre[1].p, pre[1].n)
                     : 0.0;
    }
    for (size_t i = 2; i < pre.size() && pp > 0.0; ++i) {
      const PathVertex& v = pre[i - 1];
      Vec3 wi = normalize(pre[i - 2].p - v.p);
      Vec3 d = pre[i].p - v.p;
      double len = length(d);
      if (len <= 0.0) {
        pp = 0.0;
        break;
      }
      pp *= to_area_density(pdf_bsdf(*v.material, v.n, wi, d / len), v.p, pre[i].p,
                            pre[i].n);
    }
  }
  out.prefix_pdf = pp;

  if (static_cast<int>(g.size()) == incomplete.u) {
    double pg = 1.0;
    const PathVertex* prev = &incomplete.specular_end;
    Vec3 d0 = eye_end.p - prev->p;
    double l0 = length(d0);
    if (l0 <= 0.0) return out;
    Vec3 wi = d0 / l0;
    for (int j = 0; j < incomplete.u; ++j) {
      Vec3 d = g[j].p - prev->p;
      double len = length(d);
      if (len <= 0.0) {
        pg = 0.0;
        break;
      }
      double pdf_w = pdf_bsdf(*prev->material, prev->n, wi, d / len);
      if (pdf_w <= 0.0) {
        pg = 0.0;
        break;
      }
      pg *= to_area_density(pdf_w, prev->p, g[j].p, g[j].n);
      wi = normalize(prev->p - g[j].p);
      prev = &g[j];
    }
    out.retrace_density = pg;
  }
  return out;
}

InversePEstimate estimate_inverse_p(IncompleteLightSubPath& incomplete,
                                    const Scene& scene, SubspaceStats& stats,
                                    Rng& rng, int repeats, int64_t recursion_cap) {
  InversePEstimate out;
  if (repeats < 1) return out;
  const StatsKey key = incomplete.key();

  // Probe the target-to-support ratio to seed (or sharpen) the bucket's
  // bound before running the reciprocal walks.
  for (int i = 0; i < 4; ++i) {
    SupportCandidate cand = support_sample(incomplete, scene, rng);
    if (!cand.valid || !(cand.q > 0.0)) continue;
    double f = cand.escaped ? 0.0 : target_density(incomplete, cand.g, scene);
    stats.update_ratio(key, f / cand.q);
  }
  const double bound = stats.b_bound(key);
  if (!(bound > 0.0)) return out;

  recip::IntegrandOracle<SupportCandidate> f_oracle =
      [&](const SupportCandidate& c) {
        return c.escaped ? 0.0 : target_density(incomplete, c.g, scene);
      };
  recip::SupportSampler<SupportCandidate> sampler{
      [&](Rng& r) { return support_sample(incomplete, scene, r); },
      [](const SupportCandidate& c) { return c.q; }};
  recip::ReciprocalConfig cfg;
  cfg.bound = bound;
  cfg.recursion_cap = recursion_cap;

  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < repeats; ++i) {
    recip::ReciprocalRun run = recip::estimate_reciprocal(f_oracle, sampler, cfg, rng);
    sum += run.estimate;
    sum_sq += run.estimate * run.estimate;
    out.cost += run.cost;
    if (run.truncated) ++out.truncated_runs;
  }
  out.mean = sum / repeats;
  out.second_moment = sum_sq / repeats;
  if (!std::isfinite(out.mean) || out.mean <= 0.0) {
    out.mean = 0.0;
    return out;
  }
  out.valid = true;
  incomplete.inverse_p = out.mean;
  incomplete.inverse_p_m2 = out.second_moment;
  stats.update_estimate(key, out.mean);
  return out;
}

double proxy_weight_density(const FullPath& path, const Scene& scene,
                            const SubspaceMapper& mapper,
                            const SubspaceStats& stats) {
  const int n = path.s + path.t;
  if (n < 4) return 0.0;
  auto vertex = [&](int i) -> const PathVertex& {
    return i < path.s ? path.light[i] : path.eye[n - 1 - i];
  };
  if (vertex(n - 1).flag != VertexFlag::kCamera) return 0.0;

  // The eye side of a proxy connection is cut at its first non-specular
  // vertex; everything below the junction partner is re-derived from the
  // path alone so the weight is split-agnostic.
  int k = 1;
  while (n - 1 - k >= 1 && specular_material(vertex(n - 1 - k))) ++k;
  const int jz = n - 1 - k;
  if (jz < 2) return 0.0;
  const PathVertex& zv = vertex(jz);
  if (zv.material == nullptr || specular_material(zv)) return 0.0;

  const int jy = jz - 1;
  if (!specular_material(vertex(jy))) return 0.0;
  int u = 0;
  while (jy - u >= 0 && specular_material(vertex(jy - u))) ++u;
  if (u < 1 || u > 4) return 0.0;
  const int ti = jy - u;
  if (ti < 0) return 0.0;
  const int ci = ti - 1;
  const PathVertex* hc = nullptr;
  std::optional<Vec3> wc;
  if (ci >= 0) {
    hc = &vertex(ci);
    if (hc->emitter < 0) return 0.0;
    if (ci >= 1) wc = normalize(hc->p - vertex(ci - 1).p);
    if (vertex(0).emitter < 0) return 0.0;
  } else {
    if (vertex(ti).emitter < 0) return 0.0;
  }

  auto bsdf_step = [&](int at, int from, int to) -> double {
    const PathVertex& v = vertex(at);
    Vec3 wi = normalize(vertex(from).p - v.p);
    Vec3 d = vertex(to).p - v.p;
    double len = length(d);
    if (len <= 0.0) return 0.0;
    double pdf_w = pdf_bsdf(*v.material, v.n, wi, d / len);
    return to_area_density(pdf_w, v.p, vertex(to).p, vertex(to).n);
  };

  double p = 1.0;
  // Eye chain: the camera vertex and the primary hit carry unit density.
  for (int j = n - 3; j >= jz; --j) {
    double step = bsdf_step(j + 1, j + 2, j);
    if (step <= 0.0) return 0.0;
    p *= step;
  }
  // Retained prefix.
  if (ci >= 0) {
    p *= 1.0 / scene.total_emitter_area;
    if (ci >= 1) {
      const PathVertex& y0 = vertex(0);
      Vec3 d = vertex(1).p - y0.p;
      double len = length(d);
      if (len <= 0.0) return 0.0;
      double pdf_w = emitter_direction_pdf(y0.n, d / len);
      if (pdf_w <= 0.0) return 0.0;
      p *= to_area_density(pdf_w, y0.p, vertex(1).p, vertex(1).n);
    }
    for (int i = 2; i <= ci; ++i) {
      double step = bsdf_step(i - 1, i - 2, i);
      if (step <= 0.0) return 0.0;
      p *= step;
    }
  }
  // Retraced block: the junction partner is lit from the eye side.
  {
    double step = bsdf_step(jy, jz, jy - 1);
    if (step <= 0.0) return 0.0;
    p *= step;
  }
  for (int m = jy - 1; m > ti; --m) {
    double step = bsdf_step(m, m + 1, m - 1);
    if (step <= 0.0) return 0.0;
    p *= step;
  }

  const StatsKey key{u, mapper.classify_control(hc, wc),
                     mapper.classify_specular(vertex(jy))};
  const BucketStats* b = stats.find(key);
  if (b == nullptr || b->est_count <= 0) return 0.0;
  const double m1 = b->mean_inv_p();
  if (!(m1 > 0.0)) return 0.0;
  double config_density;
  if (b->est_count >= SubspaceStats::kReliableCount) {
    const double m2 = b->mean_inv_p_sq();
    if (!(m2 > 0.0)) return 0.0;
    config_density = m1 / m2;  // estimator variance shrinks the proxy weight
  } else {
    config_density = 1.0 / m1;  // variance-free fallback on thin buckets
  }
  return p * config_density;
}

double reciprocal_mis_weight(const FullPath& path, const StrategyId& current,
                             const Scene& scene, const SubspaceMapper& mapper,
                             const SubspaceStats& stats) {
  const double p_proxy = proxy_weight_density(path, scene, mapper, stats);
  const double num =
      current.proxy ? p_proxy : strategy_pdf(path, current.s, current.t, scene);
  if (num <= 0.0) return 0.0;
  const int n_v = path.s + path.t;
  double denom = 0.0;
  for (int sp = 0; sp <= n_v - 2; ++sp)
    denom += strategy_pdf(path, sp, n_v - sp, scene);
  denom += p_proxy;
  return num / denom;
}

Vec3 proxy_connect(const SubPath& eye, const IncompleteLightSubPath& incomplete,
                   const Scene& scene, const SubspaceMapper& mapper,
                   const SubspaceStats& stats, Rng& rng) {
  const int t = static_cast<int>(eye.vertices.size());
  if (t < 2) return Vec3(0.0);
  const PathVertex& z = eye.vertices[t - 1];
  if (z.flag != VertexFlag::kDiffuse) return Vec3(0.0);
  for (int i = 1; i + 1 < t; ++i)
    if (eye.vertices[i].flag != VertexFlag::kSpecular) return Vec3(0.0);
  if (!(incomplete.inverse_p > 0.0) || !(incomplete.prefix_pdf > 0.0))
    return Vec3(0.0);

  RetraceResult rt = retrace_proxy(incomplete, z, scene, rng);
  if (!rt.accepted || !(rt.density > 0.0)) return Vec3(0.0);
  SubPath rep = repair(incomplete, rt.path.vertices);
  const auto& lv = rep.vertices;
  const int s = static_cast<int>(lv.size());

  // Value of the repaired path: emission, every segment's geometry (the
  // control-to-block segment was never traced, so occlusion is checked on
  // all of them), interior kernels, and the two junction kernels.
  Vec3 d01 = lv[1].p - lv[0].p;
  double l01 = length(d01);
  if (l01 <= 0.0 || lv[0].emitter < 0) return Vec3(0.0);
  Vec3 value = scene.emitted(lv[0].emitter, lv[0].n, d01 / l01);
  if (near_zero(value)) return Vec3(0.0);
  for (int i = 0; i + 1 < s; ++i) {
    double gt = geometry_term(lv[i], lv[i + 1], scene);
    if (gt <= 0.0) return Vec3(0.0);
    value *= gt;
  }
  double gj = geometry_term(lv[s - 1], z, scene);
  if (gj <= 0.0) return Vec3(0.0);
  value *= gj;
  for (int i = 1; i < s; ++i) {
    Vec3 wi = normalize(lv[i - 1].p - lv[i].p);
    Vec3 to = i + 1 < s ? lv[i + 1].p : z.p;
    Vec3 wo = normalize(to - lv[i].p);
    Vec3 fk = eval_bsdf(*lv[i].material, lv[i].n, wi, wo);
    if (near_zero(fk)) return Vec3(0.0);
    value = value * fk;
  }
  Vec3 fz = eval_bsdf(*z.material, z.n, z.wi, normalize(lv[s - 1].p - z.p));
  if (near_zero(fz)) return Vec3(0.0);
  value = value * fz * z.throughput;

  FullPath fp;
  fp.light = lv;
  fp.eye = eye.vertices;
  fp.s = s;
  fp.t = t;
  const double w =
      reciprocal_mis_weight(fp, StrategyId{s, t, true}, scene, mapper, stats);
  if (!(w > 0.0)) return Vec3(0.0);
  return value * (incomplete.inverse_p * w / (incomplete.prefix_pdf * rt.density));
}

void ProxyDiagnostics::write_csv(std::ostream& os) const {
  os << "u,c,s,retrace_attempts,retrace_accepts,recip_runs,recip_truncated,"
        "estimates_failed\n";
  for (const auto& [key, row] : rows) {
    os << key.u << ',' << key.c << ',' << key.s << ',' << row.retrace_attempts
       << ',' << row.retrace_accepts << ',' << row.recip_runs << ','
       << row.recip_truncated << ',' << row.estimates_failed << '\n';
  }
  os << "# pool_raw=" << pool_raw << " pool_kept=" << pool_kept << '\n';
}

namespace {

// One standard bidirectional sample with the variance-aware weights. With
// empty statistics every weight equals the balance heuristic bit for bit,
// which keeps this estimator interchangeable with the plain renderer.
Vec3 weighted_bdpt_value(const Scene& scene, const SubPath& eye, const SubPath& light,
                         const SubspaceMapper& mapper, const SubspaceStats& stats) {
  const int max_depth = scene.settings.max_depth;
  Vec3 radiance(0.0);
  const int n_eye = static_cast<int>(eye.vertices.size());
  const int n_light = static_cast<int>(light.vertices.size());
  for (int t = 2; t <= n_eye; ++t) {
    Vec3 le = eye_hit_emission(eye, t, scene);
    if (!near_zero(le)) {
      FullPath fp = make_full_path(light, 0, eye, t);
      radiance += le * reciprocal_mis_weight(fp, StrategyId{0, t, false}, scene,
                                             mapper, stats);
    }
    for (int s = 1; s <= n_light && s + t <= max_depth + 1; ++s) {
      FullPath fp = make_full_path(light, s, eye, t);
      Vec3 c = connection_contribution(fp, scene);
      if (near_zero(c)) continue;
      radiance += c * reciprocal_mis_weight(fp, StrategyId{s, t, false}, scene,
                                            mapper, stats);
    }
  }
  return radiance;
}

}  // namespace

Image render_proxy_bdpt(const Scene& scene, int spp, uint64_t seed,
                        const ProxyParams& params, ProxyDiagnostics* diagnostics,
                        const std::function<bool(int, const Image&)>& pass_done) {
  if (spp <= 0) spp = scene.settings.spp;
  const int width = scene.camera.width;
  const int height = scene.camera.height;
  const int n_px = width * height;
  const int max_depth = scene.settings.max_depth;

  const SubspaceMapper mapper = SubspaceMapper::for_scene(scene);
  SubspaceStats stats;
  GammaMatrix gamma =
      GammaMatrix::uniform(mapper.t_count, mapper.s_count, params.freeze_iteration);

  // Every pixel owns the same stream the plain renderer would use; the pool,
  // the gates and the pretrace draw from disjoint stream ranges so the
  // standard estimates stay untouched by the proxy machinery.
  std::vector<Rng> pixel_rng;
  pixel_rng.reserve(n_px);
  for (int i = 0; i < n_px; ++i) pixel_rng.emplace_back(seed, static_cast<uint64_t>(i));

  if (params.enabled) {
    Rng pre(seed, uint64_t(3) << 32);
    stats = pretrace_statistics(scene, std::max(params.pretrace_paths, 1000), pre,
                                mapper);
  }

  const int light_walks = params.light_walks > 0 ? params.light_walks : n_px;
  const int grid_w = (width + 9) / 10;
  const int grid_h = (height + 9) / 10;
  std::vector<double> grid_proxy(static_cast<size_t>(grid_w) * grid_h, 0.0);
  std::vector<double> grid_total(static_cast<size_t>(grid_w) * grid_h, 0.0);
  auto grid_of = [&](int x, int y) { return (y / 10) * grid_w + x / 10; };

  Image acc(width, height);
  int done = 0;
  for (int pass = 0; pass < spp; ++pass) {
    // Stage 1: pool incomplete light sub-paths, thinned to the budget, and
    // attach reciprocal estimates. All statistics updates happen here, so the
    // weights of stage 2 see one frozen snapshot per pass.
    std::vector<IncompleteLightSubPath> pool;
    std::vector<std::vector<int>> by_label(mapper.s_count);
    double kappa = 1.0;
    if (params.enabled) {
      Rng pool_rng(seed, (uint64_t(1) << 32) + static_cast<uint64_t>(pass));
      long long raw = 0;
      for (int w = 0; w < light_walks; ++w) {
        SubPath walk = trace_light_subpath(scene, max_depth - 1, pool_rng);
        const int n = static_cast<int>(walk.vertices.size());
        for (int end = 2; end <= n; ++end) {
          if (walk.vertices[end - 1].flag != VertexFlag::kSpecular) continue;
          SubPath prefix;
          prefix.kind = SubPathKind::kLight;
          prefix.vertices.assign(walk.vertices.begin(), walk.vertices.begin() + end);
          auto inc = dropout(prefix, mapper);
          if (!inc) continue;
          ++raw;
          if (static_cast<int>(pool.size()) < params.pool_budget) {
            pool.push_back(std::move(*inc));
          } else {
            uint32_t j = pool_rng.next_below(static_cast<uint32_t>(raw));
            if (j < static_cast<uint32_t>(params.pool_budget)) pool[j] = std::move(*inc);
          }
        }
      }
      kappa = raw > 0 ? std::min(1.0, static_cast<double>(params.pool_budget) /
                                          static_cast<double>(raw))
                      : 1.0;
      if (diagnostics) diagnostics->pool_raw += raw;

      std::vector<IncompleteLightSubPath> kept;
      kept.reserve(pool.size());
      for (auto& inc : pool) {
        InversePEstimate est =
            estimate_inverse_p(inc, scene, stats, pool_rng, params.recip_repeats,
                               params.recursion_cap);
        if (diagnostics) {
          ProxyDiagRow& row = diagnostics->rows[inc.key()];
          row.recip_runs += params.recip_repeats;
          row.recip_truncated += est.truncated_runs;
          if (!est.valid) ++row.estimates_failed;
        }
        if (!est.valid) continue;
        kept.push_back(std::move(inc));
      }
      pool = std::move(kept);
      if (diagnostics) diagnostics->pool_kept += static_cast<long long>(pool.size());
      for (int i = 0; i < static_cast<int>(pool.size()); ++i)
        by_label[pool[i].s_label].push_back(i);
    }

    // Stage 2: per-pixel standard strategies plus one gated proxy connection.
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const int idx = y * width + x;
        Rng& rng = pixel_rng[idx];
        SubPath eye = trace_eye_subpath(scene, x, y, max_depth + 1, rng);
        SubPath light = trace_light_subpath(scene, max_depth - 1, rng);
        Vec3 val = weighted_bdpt_value(scene, eye, light, mapper, stats);

        if (params.enabled && !pool.empty()) {
          // Cut the eye sub-path at its first non-specular surface vertex.
          int tp = 0;
          const int n_eye = static_cast<int>(eye.vertices.size());
          for (int i = 1; i < n_eye; ++i) {
            if (eye.vertices[i].flag == VertexFlag::kDiffuse) {
              tp = i + 1;
              break;
            }
            if (eye.vertices[i].flag != VertexFlag::kSpecular) break;
          }
          if (tp >= 2) {
            Rng prox_rng(seed, (uint64_t(2) << 32) +
                                   static_cast<uint64_t>(pass) * n_px + idx);
            const int cell = grid_of(x, y);
            double gate = params.gate_high;
            if (pass > 0) {
              double share = grid_total[cell] > 0.0
                                 ? grid_proxy[cell] / grid_total[cell]
                                 : 0.0;
              gate = share > params.gate_threshold ? params.gate_high
                                                   : params.gate_low;
            }
            if (gate > 0.0 && prox_rng.next_double() < gate) {
              const PathVertex& z = eye.vertices[tp - 1];
              const int t_label = mapper.classify_eye(z.p, -z.wi);
              double z_norm = 0.0;
              for (int sl = 0; sl < mapper.s_count; ++sl)
                if (!by_label[sl].empty()) z_norm += gamma.pmf(t_label, sl);
              if (z_norm > 0.0) {
                double uu = prox_rng.next_double() * z_norm;
                int chosen = -1;
                double cdf = 0.0;
                for (int sl = 0; sl < mapper.s_count; ++sl) {
                  if (by_label[sl].empty()) continue;
                  chosen = sl;
                  cdf += gamma.pmf(t_label, sl);
                  if (uu < cdf) break;
                }
                const double row_p = gamma.pmf(t_label, chosen) / z_norm;
                const auto& bucket = by_label[chosen];
                const IncompleteLightSubPath& inc =
                    pool[bucket[prox_rng.next_below(
                        static_cast<uint32_t>(bucket.size()))]];
                const int s_rep =
                    static_cast<int>(inc.prefix.size()) + inc.u + 1;
                if (s_rep + tp <= max_depth + 1) {
                  SubPath eye_prefix;
                  eye_prefix.kind = SubPathKind::kEye;
                  eye_prefix.vertices.assign(eye.vertices.begin(),
                                             eye.vertices.begin() + tp);
                  if (diagnostics) ++diagnostics->rows[inc.key()].retrace_attempts;
                  Vec3 c = proxy_connect(eye_prefix, inc, scene, mapper, stats,
                                         prox_rng);
                  if (!near_zero(c)) {
                    if (diagnostics) ++diagnostics->rows[inc.key()].retrace_accepts;
                    const double q_sel = row_p / static_cast<double>(bucket.size());
                    Vec3 contrib =
                        c / (static_cast<double>(light_walks) * kappa * gate * q_sel);
                    val += contrib;
                    gamma.record_contribution(t_label, chosen,
                                              luminance(c) / q_sel);
                    grid_proxy[cell] += luminance(contrib);
                  }
                }
              }
            }
          }
        }
        acc.at(x, y) += val;
        grid_total[grid_of(x, y)] += luminance(val);
      }
    }
    gamma.end_iteration();
    ++done;
    if (pass_done) {
      Image mean(width, height);
      for (size_t i = 0; i < mean.pixels.size(); ++i)
        mean.pixels[i] = acc.pixels[i] / static_cast<double>(done);
      if (!pass_done(done, mean)) break;
    }
  }

  Image out(width, height);
  for (size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = acc.pixels[i] / static_cast<double>(done > 0 ? done : 1);
  return out;
}

}  // namespace proxima
