// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <compare>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

#include "proxima/rng.hpp"
#include "proxima/scene.hpp"
#include "proxima/transport.hpp"
#include "proxima/vec.hpp"

namespace proxima {

// Deterministic classification of vertices into a small number of labels so
// that sampling statistics can be shared. Labels hash a spatial grid cell
// with a direction/normal octant; classification is a pure function of
// (position, normal, direction).
struct SubspaceMapper {
  Vec3 bbox_min, bbox_max;
  int grid_res = 4;    // cells per axis
  int s_count = 100;   // specular subspaces
  int c_count = 10;    // control subspaces (label 0 reserved for "none")
  int t_count = 32;    // eye subspaces

  static SubspaceMapper for_scene(const Scene& scene);

  // Flattened grid cell index in [0, grid_res^3).
  int grid_cell(const Vec3& p) const;
  // Sign octant of a direction or normal, in [0, 8).
  static int octant(const Vec3& v);

  // Specular vertices share a label when they fall in the same grid cell
  // with the same normal octant. Throws on non-specular vertices.
  int classify_specular(const PathVertex& v) const;

  // Control label: 0 when there is no control vertex; otherwise a grid +
  // direction-octant hash into [1, c_count). A null control direction
  // occupies its own reserved octant slot so (point, null) and
  // (point, direction) never share a label.
  int classify_control(const PathVertex* h_c,
                       const std::optional<Vec3>& omega_c) const;

  // Eye label from the connecting vertex position and its incident
  // propagation direction, in [0, t_count).
  int classify_eye(const Vec3& p, const Vec3& dir) const;
};

// Statistics bucket key: glossy count u plus the control / specular labels.
struct StatsKey {
  int u = 1;
  int c = 0;
  int s = 0;
  auto operator<=>(const StatsKey&) const = default;
};

// Per-bucket running data. The ratio track records observed f/q values and
// feeds the upper bound B; the estimate track records realized inverse-PDF
// estimates and feeds the reciprocal-aware MIS weight through its first and
// second moments.
struct BucketStats {
  double max_ratio = 0.0;    // running max of f/q, monotone nondecreasing
  long long ratio_count = 0;
  double sum_est = 0.0;      // sum of inverse-PDF estimates
  double sum_est_sq = 0.0;   // sum of squared inverse-PDF estimates
  long long est_count = 0;

  void update_ratio(double f_over_q);
  void update_estimate(double inv_p_estimate);
  void merge(const BucketStats& other);
  double mean_inv_p() const;     // first moment, 0 when empty
  double mean_inv_p_sq() const;  // second moment, 0 when empty
};

struct SubspaceStats {
  std::map<StatsKey, BucketStats> buckets;

  // Records one observation: the f/q ratio always updates the running max;
  // the inverse-PDF estimate updates the moment track.
  void update(const StatsKey& key, double f_over_q, double inv_p_estimate);
  void update_ratio(const StatsKey& key, double f_over_q);
  void update_estimate(const StatsKey& key, double inv_p_estimate);

  // Associative, commutative shard merge.
  void merge(const SubspaceStats& other);

  const BucketStats* find(const StatsKey& key) const;
  // Upper bound for reciprocal estimation: twice the observed max of f/q
  // (the observed max underestimates the true bound; overestimating only
  // costs efficiency). Zero when the bucket has no ratio observations.
  double b_bound(const StatsKey& key) const;
  // Second-moment data is trusted once at least this many estimates landed
  // in the bucket; below it the MIS weight falls back to treating the
  // estimate as variance-free.
  static constexpr long long kReliableCount = 16;
  bool reliable(const StatsKey& key) const;

  bool empty() const { return buckets.empty(); }
  void write_csv(std::ostream& os) const;
};

// PMF table for picking a specular subspace given an eye subspace. Rows are
// learned from accumulated proxy-connection contributions during the first
// `freeze_iteration` passes, then frozen. Every entry keeps at least the
// floor so no subspace ever becomes unreachable.
struct GammaMatrix {
  int t_count = 0;
  int s_count = 0;
  double eps_floor = 0.0;
  std::vector<double> rows;   // t_count x s_count, each row a PMF
  std::vector<double> accum;  // accumulated contributions per (t, s)
  bool learning = true;
  int iteration = 0;
  int freeze_iteration = 40;

  static GammaMatrix uniform(int t_count, int s_count, int freeze_iteration = 40);

  double pmf(int t, int s) const { return rows[static_cast<size_t>(t) * s_count + s]; }
  // Draws S ~ row t; returns the label and stores its PMF value.
  int sample(int t, Rng& rng, double* pmf_out = nullptr) const;
  // Accumulates a realized contribution for pair (t, s); ignored once frozen.
  void record_contribution(int t, int s, double contribution);
  // Rebuilds rows from the accumulated contributions (floored, renormalised)
  // and advances the iteration counter; freezes after freeze_iteration.
  void end_iteration();
  void write_csv(std::ostream& os) const;
};

// Seeds the statistics tables by tracing light sub-paths, forming every
// dropout-eligible incomplete configuration, and recording observed f/q
// ratios of the reciprocal-estimation integrand against the supporting
// distribution. Scenes without specular materials yield empty stats.
// Requires n_paths >= 1000.
SubspaceStats pretrace_statistics(const Scene& scene, int n_paths, Rng& rng,
                                  const SubspaceMapper& mapper);

}  // namespace proxima
