// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "proxima/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "proxima/proxy.hpp"

namespace proxima {

SubspaceMapper SubspaceMapper::for_scene(const Scene& scene) {
  SubspaceMapper m;
  m.bbox_min = scene.bbox_min;
  m.bbox_max = scene.bbox_max;
  return m;
}

int SubspaceMapper::grid_cell(const Vec3& p) const {
  auto axis = [&](double v, double lo, double hi) {
    double extent = hi - lo;
    if (!(extent > 0.0)) return 0;
    int i = static_cast<int>((v - lo) / extent * grid_res);
    return std::clamp(i, 0, grid_res - 1);
  };
  int ix = axis(p.x, bbox_min.x, bbox_max.x);
  int iy = axis(p.y, bbox_min.y, bbox_max.y);
  int iz = axis(p.z, bbox_min.z, bbox_max.z);
  return (ix * grid_res + iy) * grid_res + iz;
}

int SubspaceMapper::octant(const Vec3& v) {
  return (v.x > 0.0 ? 1 : 0) | (v.y > 0.0 ? 2 : 0) | (v.z > 0.0 ? 4 : 0);
}

int SubspaceMapper::classify_specular(const PathVertex& v) const {
  if (v.flag != VertexFlag::kSpecular)
    throw std::invalid_argument("classify_specular: vertex is not specular");
  return (grid_cell(v.p) * 8 + octant(v.n)) % s_count;
}

int SubspaceMapper::classify_control(const PathVertex* h_c,
                                     const std::optional<Vec3>& omega_c) const {
  if (h_c == nullptr) return 0;
  // Nine direction slots: eight octants plus one reserved for "no direction".
  int slot = omega_c ? octant(*omega_c) : 8;
  int raw = grid_cell(h_c->p) * 9 + slot;
  return 1 + raw % (c_count - 1);
}

int SubspaceMapper::classify_eye(const Vec3& p, const Vec3& dir) const {
  return (grid_cell(p) * 8 + octant(dir)) % t_count;
}

void BucketStats::update_ratio(double f_over_q) {
  if (!std::isfinite(f_over_q) || f_over_q < 0.0)
    throw std::invalid_argument("update_ratio: ratio must be finite and non-negative");
  max_ratio = std::max(max_ratio, f_over_q);
  ++ratio_count;
}

void BucketStats::update_estimate(double inv_p_estimate) {
  if (!std::isfinite(inv_p_estimate))
    throw std::invalid_argument("update_estimate: estimate must be finite");
  sum_est += inv_p_estimate;
  sum_est_sq += inv_p_estimate * inv_p_estimate;
  ++est_count;
}

void BucketStats::merge(const BucketStats& other) {
  max_ratio = std::max(max_ratio, other.max_ratio);
  ratio_count += other.ratio_count;
  sum_est += other.sum_est;
  sum_est_sq += other.sum_est_sq;
  est_count += other.est_count;
}

double BucketStats::mean_inv_p() const {
  return est_count > 0 ? sum_est / static_cast<double>(est_count) : 0.0;
}

double BucketStats::mean_inv_p_sq() const {
  return est_count > 0 ? sum_est_sq / static_cast<double>(est_count) : 0.0;
}

void SubspaceStats::update(const StatsKey& key, double f_over_q, double inv_p_estimate) {
  BucketStats& b = buckets[key];
  b.update_ratio(f_over_q);
  b.update_estimate(inv_p_estimate);
}

void SubspaceStats::update_ratio(const StatsKey& key, double f_over_q) {
  buckets[key].update_ratio(f_over_q);
}

void SubspaceStats::update_estimate(const StatsKey& key, double inv_p_estimate) {
  buckets[key].update_estimate(inv_p_estimate);
}

void SubspaceStats::merge(const SubspaceStats& other) {
  for (const auto& [key, bucket] : other.buckets) buckets[key].merge(bucket);
}

const BucketStats* SubspaceStats::find(const StatsKey& key) const {
  auto it = buckets.find(key);
  return it == buckets.end() ? nullptr : &it->second;
}

double SubspaceStats::b_bound(const StatsKey& key) const {
  const BucketStats* b = find(key);
  return b ? 2.0 * b->max_ratio : 0.0;
}

bool SubspaceStats::reliable(const StatsKey& key) const {
  const BucketStats* b = find(key);
  return b && b->est_count >= kReliableCount;
}

void SubspaceStats::write_csv(std::ostream& os) const {
  os << "u,c,s,ratio_count,max_f_over_q,b_bound,est_count,mean_inv_p,mean_inv_p_sq\n";
  for (const auto& [key, b] : buckets) {
    os << key.u << ',' << key.c << ',' << key.s << ',' << b.ratio_count << ','
       << b.max_ratio << ',' << 2.0 * b.max_ratio << ',' << b.est_count << ','
       << b.mean_inv_p() << ',' << b.mean_inv_p_sq() << '\n';
  }
}

GammaMatrix GammaMatrix::uniform(int t_count, int s_count, int freeze_iteration) {
  if (t_count < 1 || s_count < 1)
    throw std::invalid_argument("GammaMatrix: counts must be positive");
  GammaMatrix g;
  g.t_count = t_count;
  g.s_count = s_count;
  g.freeze_iteration = freeze_iteration;
  g.eps_floor = 1e-3 / s_count;
  g.rows.assign(static_cast<size_t>(t_count) * s_count, 1.0 / s_count);
  g.accum.assign(static_cast<size_t>(t_count) * s_count, 0.0);
  return g;
}

int GammaMatrix::sample(int t, Rng& rng, double* pmf_out) const {
  const double* row = rows.data() + static_cast<size_t>(t) * s_count;
  double u = rng.next_double();
  double cdf = 0.0;
  for (int s = 0; s < s_count; ++s) {
    cdf += row[s];
    if (u < cdf || s == s_count - 1) {
      if (pmf_out) *pmf_out = row[s];
      return s;
    }
  }
  if (pmf_out) *pmf_out = row[s_count - 1];
  return s_count - 1;
}

void GammaMatrix::record_contribution(int t, int s, double contribution) {
  if (!learning) return;
  if (!std::isfinite(contribution) || contribution < 0.0) return;
  accum[static_cast<size_t>(t) * s_count + s] += contribution;
}

void GammaMatrix::end_iteration() {
  if (!learning) return;
  for (int t = 0; t < t_count; ++t) {
    double* row = rows.data() + static_cast<size_t>(t) * s_count;
    const double* acc = accum.data() + static_cast<size_t>(t) * s_count;
    double total = 0.0;
    for (int s = 0; s < s_count; ++s) total += acc[s];
    if (total <= 0.0) {
      std::fill(row, row + s_count, 1.0 / s_count);
      continue;
    }
    // Mix the contribution-proportional row with the floor so entries stay
    // at least eps_floor and the row sums to exactly one.
    double keep = 1.0 - eps_floor * s_count;
    for (int s = 0; s < s_count; ++s) row[s] = keep * (acc[s] / total) + eps_floor;
  }
  ++iteration;
  if (iteration >= freeze_iteration) learning = false;
}

void GammaMatrix::write_csv(std::ostream& os) const {
  os << "t,s,pmf\n";
  for (int t = 0; t < t_count; ++t)
    for (int s = 0; s < s_count; ++s) os << t << ',' << s << ',' << pmf(t, s) << '\n';
}

SubspaceStats pretrace_statistics(const Scene& scene, int n_paths, Rng& rng,
                                  const SubspaceMapper& mapper) {
  if (n_paths < 1000)
    throw std::invalid_argument("pretrace_statistics: need at least 1000 paths");
  SubspaceStats stats;
  // Longest dropout-eligible sub-path: emitter, optional diffuse bounce, a
  // specular run of up to four vertices, and the specular endpoint.
  const int max_vertices = 7;
  for (int i = 0; i < n_paths; ++i) {
    SubPath walk = trace_light_subpath(scene, max_vertices, rng);
    int n = static_cast<int>(walk.vertices.size());
    for (int end = 2; end <= n; ++end) {
      if (walk.vertices[end - 1].flag != VertexFlag::kSpecular) continue;
      SubPath prefix;
      prefix.kind = SubPathKind::kLight;
      prefix.vertices.assign(walk.vertices.begin(), walk.vertices.begin() + end);
      auto incomplete = dropout(prefix, mapper);
      if (!incomplete) continue;
      StatsKey key{incomplete->u, incomplete->c_label, incomplete->s_label};
      for (int probe = 0; probe < 2; ++probe) {
        SupportCandidate cand = support_sample(*incomplete, scene, rng);
        if (!cand.valid || cand.q <= 0.0) continue;
        double f = cand.escaped ? 0.0 : target_density(*incomplete, cand.g, scene);
        stats.update_ratio(key, f / cand.q);
      }
    }
  }
  return stats;
}

}  // namespace proxima
