// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "proxima/image.hpp"
#include "proxima/rng.hpp"
#include "proxima/scene.hpp"
#include "proxima/subspace.hpp"
#include "proxima/transport.hpp"

namespace proxima {

// Dropout of the problematic vertices adjacent to a trailing specular run of
// a light sub-path. For a sub-path y_0..y_{s-1} ending in u consecutive
// specular vertices y_{s-1}..y_{s-u}, the dropped block g is
// y_{s-2}..y_{s-u-1} (stored nearest-to-the-specular-endpoint first); the
// retained data is the prefix y_0..y_{s-u-2}, the specular endpoint y_{s-1},
// the glossy count u, and the control vertex/direction that parameterise the
// incomplete-path density integral.
struct IncompleteLightSubPath {
  std::vector<PathVertex> prefix;         // retained prefix, possibly empty
  PathVertex specular_end;                // y_{s-1}
  std::optional<Vec3> control_dir;        // propagation direction into the control vertex
  int u = 1;                              // number of dropped vertices, in [1, 4]
  double prefix_pdf = 1.0;                // area-measure density of the prefix; 1 when empty
  std::vector<VertexFlag> dropped_flags;  // classes of the dropped originals, nearest-first
  double inverse_p = 0.0;                 // cached mean of repeated reciprocal runs, > 0 when set
  double inverse_p_m2 = 0.0;              // empirical second moment of the single runs
  int c_label = 0;
  int s_label = 0;

  // The control vertex is the last prefix vertex; null when y_0 was dropped.
  const PathVertex* control() const { return prefix.empty() ? nullptr : &prefix.back(); }
  StatsKey key() const { return {u, c_label, s_label}; }
};

// Retraced replacement block, ordered like the dropped originals
// (nearest-to-the-specular-endpoint first).
struct ProxyPath {
  std::vector<PathVertex> vertices;
  bool terminal_on_emitter = false;
};

// One draw from the supporting mixture used by the reciprocal estimation.
// Walks that leave the scene or fail a lobe sample are legal points of an
// extended sample space where the integrand is zero; they carry q = 1.
struct SupportCandidate {
  std::vector<PathVertex> g;
  double q = 0.0;
  bool escaped = false;
  bool valid = false;
};

// Applies dropout to a light sub-path ending at a specular vertex. Returns
// nothing when the sub-path shape is not eligible: no trailing specular
// endpoint, glossy count outside [1, 4], or a control vertex that exists but
// does not lie on an emitter.
std::optional<IncompleteLightSubPath> dropout(const SubPath& light,
                                              const SubspaceMapper& mapper);

// Rebuilds the full light sub-path from an incomplete one and a replacement
// block (dropped originals or a retraced proxy block).
SubPath repair(const IncompleteLightSubPath& incomplete,
               const std::vector<PathVertex>& g);

struct RetraceResult {
  ProxyPath path;
  double density = 0.0;  // area-measure density of the sampled block
  bool accepted = false;
};

// Samples a proxy block from the specular endpoint's BSDF with the incident
// direction given by the eye endpoint, chaining through u surfaces. Rejects
// on escape or on a class mismatch with the dropped originals.
RetraceResult retrace_proxy(const IncompleteLightSubPath& incomplete,
                            const PathVertex& eye_end, const Scene& scene, Rng& rng);

// Supporting mixture for the reciprocal estimation: uniform over the
// strategies available for the configuration (light-surface sampling and
// endpoint tracing when u = 1 and y_0 was dropped; control tracing and
// endpoint tracing when u = 1 with a control vertex; endpoint tracing alone
// when u > 1). Densities are in area measure.
SupportCandidate support_sample(const IncompleteLightSubPath& incomplete,
                                const Scene& scene, Rng& rng);
double support_pdf(const IncompleteLightSubPath& incomplete,
                   const std::vector<PathVertex>& g, const Scene& scene);

// Integrand of the incomplete-path density integral: the light-tracing
// density of the block and of the specular endpoint given the block, with
// the class pattern of the dropped originals enforced.
double target_density(const IncompleteLightSubPath& incomplete,
                      const std::vector<PathVertex>& g, const Scene& scene);

struct InversePEstimate {
  double mean = 0.0;
  double second_moment = 0.0;  // of the single runs
  int truncated_runs = 0;
  int64_t cost = 0;
  bool valid = false;
};

// Reciprocal estimation of the incomplete-path density integral: seeds the
// bound B with a few probe ratios, averages `repeats` independent runs, and
// records the realized estimate into the statistics. Fails (valid = false)
// when no bound can be established or the averaged estimate is not positive.
InversePEstimate estimate_inverse_p(IncompleteLightSubPath& incomplete,
                                    const Scene& scene, SubspaceStats& stats,
                                    Rng& rng, int repeats = 5,
                                    int64_t recursion_cap = 10000);

struct ProxyPdfComponents {
  double prefix_pdf = 0.0;     // p of the retained prefix, area measure
  double retrace_density = 0.0;  // p of the block given endpoint + eye end
};

// Recomputes the two deterministic factors of the proxy strategy density by
// local evaluation; matches the sample-time bookkeeping of retrace_proxy.
ProxyPdfComponents proxy_pdf_components(const IncompleteLightSubPath& incomplete,
                                        const std::vector<PathVertex>& g,
                                        const PathVertex& eye_end,
                                        const Scene& scene);

struct StrategyId {
  int s = 0;
  int t = 0;
  bool proxy = false;
};

// Unnormalised weight entry of the proxy strategy for an assembled path:
// zero when the path shape is not proxy-reachable, otherwise the product of
// the deterministic density factors with the bucket's moment correction
// m1/m2 (the balance fallback 1/m1 below the reliability count). Expected
// second moments of the reciprocal estimate reduce the proxy weight.
double proxy_weight_density(const FullPath& path, const Scene& scene,
                            const SubspaceMapper& mapper,
                            const SubspaceStats& stats);

// Variance-aware MIS weight: every strategy contributes one over
// (second moment of its inverse-density estimate times its density), which
// for exactly computable densities is the density itself. Falls back to the
// plain balance heuristic when no proxy strategy can reach the path.
double reciprocal_mis_weight(const FullPath& path, const StrategyId& current,
                             const Scene& scene, const SubspaceMapper& mapper,
                             const SubspaceStats& stats);

// One full proxy connection: retraces the block toward the eye sub-path's
// final (first diffuse) vertex, evaluates the repaired path, divides by the
// deterministic density factors, multiplies by the cached reciprocal
// estimate and the variance-aware MIS weight. Zero on any rejection. Pool
// selection, gating and light-walk normalisation are the renderer's job.
Vec3 proxy_connect(const SubPath& eye, const IncompleteLightSubPath& incomplete,
                   const Scene& scene, const SubspaceMapper& mapper,
                   const SubspaceStats& stats, Rng& rng);

struct ProxyParams {
  bool enabled = true;
  int pool_budget = 400;       // incomplete sub-paths kept per pass
  int recip_repeats = 5;       // averaged reciprocal runs per incomplete
  int freeze_iteration = 40;   // passes of gamma learning
  int64_t recursion_cap = 10000;
  int pretrace_paths = 20000;  // light walks used to seed the statistics
  int light_walks = 0;         // pool walks per pass; 0 means one per pixel
  double gate_high = 1.0;      // connection probability in busy pixel grids
  double gate_low = 0.2;       // connection probability elsewhere
  double gate_threshold = 0.05;  // proxy share of a 10x10 grid counting as busy
};

struct ProxyDiagRow {
  long long retrace_attempts = 0;
  long long retrace_accepts = 0;
  long long recip_runs = 0;
  long long recip_truncated = 0;
  long long estimates_failed = 0;
};

struct ProxyDiagnostics {
  std::map<StatsKey, ProxyDiagRow> rows;
  long long pool_raw = 0;
  long long pool_kept = 0;
  void write_csv(std::ostream& os) const;
};

// Bidirectional renderer with the proxy connection strategy. Per pass it
// pools incomplete light sub-paths with cached reciprocal estimates, then
// connects each pixel's eye sub-path both by the standard strategies and by
// a gated, gamma-driven proxy connection. With proxying disabled or no
// specular materials in the scene it reproduces render_bdpt bit for bit.
// The optional callback runs after every pass with the running mean image;
// returning false stops rendering early.
Image render_proxy_bdpt(const Scene& scene, int spp, uint64_t seed,
                        const ProxyParams& params = {},
                        ProxyDiagnostics* diagnostics = nullptr,
                        const std::function<bool(int, const Image&)>& pass_done = {});

}  // namespace proxima
