// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "proxima/image.hpp"
#include "proxima/proxy.hpp"
#include "proxima/recip.hpp"
#include "proxima/rng.hpp"
#include "proxima/scene.hpp"
#include "proxima/smis.hpp"
#include "proxima/subspace.hpp"
#include "proxima/transport.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 1;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double elapsed_s(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since)
      .count();
}

// ---------------------------------------------------------------------------
// render

struct RenderConfig {
  std::string scene_path;
  std::string algo = "bdpt";  // pt | bdpt | proxy-bdpt
  std::optional<int> spp;
  std::optional<double> time_budget_s;
  uint64_t seed = 0;
  std::string out_pfm;
  std::string out_png;         // derived from out_pfm when empty
  std::string reference_pfm;   // enables the convergence log
  std::string convergence_csv; // per-pass rows, needs a reference
  std::string stats_csv;       // optional per-bucket proxy diagnostics

  bool proxy_enabled = true;
  int proxy_budget = 400;
  int recip_repeats = 5;
  int freeze_iter = 40;
  int pretrace_paths = 20000;
  int light_walks = 0;
};

void validate(const RenderConfig& cfg) {
  if (cfg.scene_path.empty()) throw ValidationError("render: --scene is required");
  if (cfg.out_pfm.empty()) throw ValidationError("render: --out is required");
  if (cfg.algo != "pt" && cfg.algo != "bdpt" && cfg.algo != "proxy-bdpt")
    throw ValidationError("render: unknown --algo '" + cfg.algo +
                          "' (expected pt, bdpt or proxy-bdpt)");
  if (cfg.spp && cfg.time_budget_s)
    throw ValidationError("render: --spp and --time-budget are mutually exclusive");
  if (cfg.spp && *cfg.spp < 1) throw ValidationError("render: --spp must be >= 1");
  if (cfg.time_budget_s && !(*cfg.time_budget_s > 0.0))
    throw ValidationError("render: --time-budget must be > 0");
  if (!cfg.convergence_csv.empty() && cfg.reference_pfm.empty())
    throw ValidationError("render: --convergence needs --reference");
  if (cfg.proxy_budget < 1) throw ValidationError("render: --proxy-budget must be >= 1");
  if (cfg.recip_repeats < 1) throw ValidationError("render: --recip-repeats must be >= 1");
  if (cfg.freeze_iter < 0) throw ValidationError("render: --freeze-iter must be >= 0");
  if (cfg.pretrace_paths < 1000)
    throw ValidationError("render: --pretrace-paths must be >= 1000");
  if (cfg.light_walks < 0) throw ValidationError("render: --light-walks must be >= 0");
}

// Overlays file values under the command line: a key is consulted only when
// the matching flag was not passed.
void overlay_json_config(const CLI::App& cmd, const std::string& path,
                         RenderConfig& cfg, std::string& spp_or_budget_owner) {
  std::ifstream in(path);
  if (!in) throw ValidationError("render: cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("render: bad JSON in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("render: config root must be an object");

  auto unused = [&](const char* flag) { return cmd.get_option(flag)->count() == 0; };
  try {
    if (j.contains("scene") && unused("--scene")) cfg.scene_path = j["scene"];
    if (j.contains("algo") && unused("--algo")) cfg.algo = j["algo"];
    if (j.contains("seed") && unused("--seed")) cfg.seed = j["seed"];
    if (j.contains("out") && unused("--out")) cfg.out_pfm = j["out"];
    if (j.contains("png") && unused("--png")) cfg.out_png = j["png"];
    if (j.contains("reference") && unused("--reference")) cfg.reference_pfm = j["reference"];
    if (j.contains("convergence") && unused("--convergence")) cfg.convergence_csv = j["convergence"];
    if (j.contains("stats") && unused("--stats")) cfg.stats_csv = j["stats"];
    if (j.contains("proxy") && unused("--proxy")) {
      std::string v = j["proxy"];
      if (v != "on" && v != "off") throw ValidationError("render: config proxy must be on/off");
      cfg.proxy_enabled = v == "on";
    }
    if (j.contains("proxy-budget") && unused("--proxy-budget")) cfg.proxy_budget = j["proxy-budget"];
    if (j.contains("recip-repeats") && unused("--recip-repeats")) cfg.recip_repeats = j["recip-repeats"];
    if (j.contains("freeze-iter") && unused("--freeze-iter")) cfg.freeze_iter = j["freeze-iter"];
    if (j.contains("pretrace-paths") && unused("--pretrace-paths")) cfg.pretrace_paths = j["pretrace-paths"];
    if (j.contains("light-walks") && unused("--light-walks")) cfg.light_walks = j["light-walks"];
    // The spp/time-budget pair is a single choice: when the command line set
    // either, the file's pair is ignored wholesale.
    if (spp_or_budget_owner.empty()) {
      if (j.contains("spp") && j.contains("time-budget"))
        throw ValidationError("render: config sets both spp and time-budget");
      if (j.contains("spp")) cfg.spp = j["spp"].get<int>();
      if (j.contains("time-budget")) cfg.time_budget_s = j["time-budget"].get<double>();
      if (cfg.spp || cfg.time_budget_s) spp_or_budget_owner = "config";
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("render: bad config value in " + path + ": " + e.what());
  }
}

class ConvergenceLog {
 public:
  ConvergenceLog(const std::string& csv_path, const std::string& reference_path,
                 std::chrono::steady_clock::time_point start)
      : start_(start) {
    if (csv_path.empty()) return;
    reference_ = proxima::read_pfm(reference_path);
    out_.open(csv_path);
    if (!out_) throw std::runtime_error("cannot open for writing: " + csv_path);
    out_ << "pass,elapsed_s,mape\n";
  }

  void log(int pass, const proxima::Image& running_mean) {
    if (!out_.is_open()) return;
    proxima::MetricReport rep = proxima::compare_images(running_mean, reference_);
    out_ << pass << "," << elapsed_s(start_) << "," << rep.mape << "\n";
  }

 private:
  std::chrono::steady_clock::time_point start_;
  proxima::Image reference_;
  std::ofstream out_;
};

uint64_t pass_seed(uint64_t seed, int pass) {
  return seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(pass);
}

int cmd_render(const RenderConfig& cfg) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  proxima::Scene scene = proxima::load_scene(cfg.scene_path);
  ConvergenceLog log(cfg.convergence_csv, cfg.reference_pfm, start);

  const bool budgeted = cfg.time_budget_s.has_value();
  const int target_spp = budgeted ? std::numeric_limits<int>::max()
                                  : cfg.spp.value_or(scene.settings.spp);

  proxima::Image result;
  if (cfg.algo == "pt") {
    // One-spp passes with a decorrelated seed per pass, averaged at the end.
    proxima::Image sum(scene.camera.width, scene.camera.height);
    int passes = 0;
    while (passes < target_spp) {
      if (budgeted && passes > 0 && elapsed_s(start) >= *cfg.time_budget_s) break;
      proxima::Image one = proxima::render_pt(scene, 1, pass_seed(cfg.seed, passes));
      ++passes;
      for (size_t i = 0; i < sum.pixels.size(); ++i) sum.pixels[i] += one.pixels[i];
      if (!cfg.convergence_csv.empty()) {
        proxima::Image mean = sum;
        for (auto& p : mean.pixels) p = p / double(passes);
        log.log(passes, mean);
      }
    }
    for (auto& p : sum.pixels) p = p / double(passes);
    result = sum;
  } else {
    // bdpt routes through the proxy renderer with proxying disabled: the
    // result is bit-identical to the plain bidirectional renderer and the
    // pass callback drives budgets and the convergence log for both modes.
    proxima::ProxyParams params;
    params.enabled = cfg.algo == "proxy-bdpt" && cfg.proxy_enabled;
    params.pool_budget = cfg.proxy_budget;
    params.recip_repeats = cfg.recip_repeats;
    params.freeze_iteration = cfg.freeze_iter;
    params.pretrace_paths = cfg.pretrace_paths;
    params.light_walks = cfg.light_walks;
    proxima::ProxyDiagnostics diag;
    auto on_pass = [&](int pass, const proxima::Image& running) {
      log.log(pass, running);
      return !budgeted || elapsed_s(start) < *cfg.time_budget_s;
    };
    result = proxima::render_proxy_bdpt(scene, target_spp, cfg.seed, params,
                                        cfg.stats_csv.empty() ? nullptr : &diag,
                                        on_pass);
    if (!cfg.stats_csv.empty()) {
      std::ofstream os(cfg.stats_csv);
      if (!os) throw std::runtime_error("cannot open for writing: " + cfg.stats_csv);
      diag.write_csv(os);
    }
  }

  proxima::write_pfm(result, cfg.out_pfm);
  std::string png = cfg.out_png;
  if (png.empty())
    png = std::filesystem::path(cfg.out_pfm).replace_extension(".png").string();
  proxima::write_png(result, png);
  std::cout << "wrote " << cfg.out_pfm << " and " << png << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// compare

int cmd_compare(const std::string& estimate, const std::string& reference) {
  proxima::Image est = proxima::read_pfm(estimate);
  proxima::Image ref = proxima::read_pfm(reference);
  proxima::MetricReport rep = proxima::compare_images(est, ref);
  std::cout << "mape=" << rep.mape << " smape=" << rep.smape
            << " mse=" << rep.mse << " epsilon=" << rep.epsilon << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench smis

int cmd_bench_smis(const proxima::smis::BenchParams& params, const std::string& out) {
  std::vector<proxima::smis::BenchRow> rows = proxima::smis::run_benchmark(params);
  std::string csv = proxima::smis::rows_to_csv(rows);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot open for writing: " + out);
    os << csv;
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bench recip

// Analytic fixtures shared by the reciprocal-estimator studies. All expose
// max(f/q) so the default bound sits exactly at the safe choice.
struct RecipFixture {
  std::string name;
  proxima::recip::IntegrandOracle<double> f;
  proxima::recip::SupportSampler<double> q;
  double max_ratio = 0.0;
};

std::vector<RecipFixture> recip_fixtures() {
  std::vector<RecipFixture> out;
  // Two equiprobable atoms with values 1 and 3 (x < 0.5 selects the first).
  out.push_back({"atoms13",
                 [](const double& x) { return x < 0.5 ? 1.0 : 3.0; },
                 {[](proxima::Rng& rng) { return rng.next_double(); },
                  [](const double&) { return 1.0; }},
                 3.0});
  // Linear density on the unit interval.
  out.push_back({"linear2x",
                 [](const double& x) { return 2.0 * x; },
                 {[](proxima::Rng& rng) { return rng.next_double(); },
                  [](const double&) { return 1.0; }},
                 2.0});
  // Integrand proportional to the support: the zero-variance case.
  out.push_back({"proportional",
                 [](const double& x) { return 1.5 * (x + 0.5); },
                 {[](proxima::Rng& rng) {
                    // pdf q(x) = x + 1/2 on [0,1] via inverse CDF.
                    double u = rng.next_double();
                    return 0.5 * (std::sqrt(1.0 + 8.0 * u) - 1.0);
                  },
                  [](const double& x) { return x + 0.5; }},
                 1.5});
  return out;
}

int cmd_bench_recip(int64_t trials, uint64_t seed, double bound_scale,
                    const std::vector<double>& booth_rs, const std::string& out) {
  if (trials < 2) throw ValidationError("bench recip: --trials must be >= 2");
  if (!(bound_scale > 0.0)) throw ValidationError("bench recip: --bound-scale must be > 0");
  for (double r : booth_rs)
    if (!(r > 0.0)) throw ValidationError("bench recip: --booth-r values must be > 0");

  std::ostringstream os;
  os << "fixture,method,r_param,bound,mean,variance,mean_cost,efficiency,truncated_fraction\n";
  proxima::Rng rng(seed, 0);
  for (const RecipFixture& fx : recip_fixtures()) {
    proxima::recip::ReciprocalConfig cfg;
    cfg.bound = bound_scale * fx.max_ratio;

    auto emit = [&](const std::string& method, double r_param,
                    const proxima::recip::EfficiencyReport& rep) {
      os << fx.name << "," << method << "," << r_param << "," << cfg.bound << ","
         << rep.mean << "," << rep.variance << "," << rep.mean_cost << ","
         << rep.efficiency << "," << rep.truncated_fraction << "\n";
    };

    cfg.mode = proxima::recip::Mode::kMain;
    emit("ours", 0.0, proxima::recip::measure_efficiency(
        [&](proxima::Rng& r) { return proxima::recip::estimate(fx.f, fx.q, cfg, r); },
        trials, rng));

    cfg.mode = proxima::recip::Mode::kSign;
    emit("sign", 0.0, proxima::recip::measure_efficiency(
        [&](proxima::Rng& r) { return proxima::recip::estimate(fx.f, fx.q, cfg, r); },
        trials, rng));

    cfg.mode = proxima::recip::Mode::kBooth;
    for (double r_param : booth_rs) {
      cfg.booth_r = r_param;
      emit("booth", r_param, proxima::recip::measure_efficiency(
          [&](proxima::Rng& r) { return proxima::recip::estimate(fx.f, fx.q, cfg, r); },
          trials, rng));
    }
  }

  if (out.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream file(out);
    if (!file) throw std::runtime_error("cannot open for writing: " + out);
    file << os.str();
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// dump-stats

int cmd_dump_stats(const std::string& scene_path, int paths, uint64_t seed,
                   const std::string& out) {
  if (paths < 1000) throw ValidationError("dump-stats: --paths must be >= 1000");
  proxima::Scene scene = proxima::load_scene(scene_path);
  proxima::SubspaceMapper mapper = proxima::SubspaceMapper::for_scene(scene);
  proxima::Rng rng(seed, 0);
  proxima::SubspaceStats stats = proxima::pretrace_statistics(scene, paths, rng, mapper);
  if (out.empty()) {
    stats.write_csv(std::cout);
  } else {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot open for writing: " + out);
    stats.write_csv(os);
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"proxima: bidirectional renderer with proxy-sampled caustic connections"};
  app.require_subcommand(1);

  // render ------------------------------------------------------------------
  RenderConfig rc;
  std::string config_path, proxy_switch = "on";
  int spp_flag = 0;
  double budget_flag = 0.0;
  CLI::App* render = app.add_subcommand("render", "Render a scene to PFM + PNG");
  render->add_option("--scene", rc.scene_path, "Scene JSON path");
  render->add_option("--config", config_path,
                     "JSON config mirroring the flags; flags take precedence");
  render->add_option("--algo", rc.algo, "pt | bdpt | proxy-bdpt")
      ->capture_default_str();
  render->add_option("--spp", spp_flag, "Samples per pixel (defaults to the scene's)");
  render->add_option("--time-budget", budget_flag,
                     "Seconds to render for, stopping within one pass");
  render->add_option("--seed", rc.seed, "RNG seed")->capture_default_str();
  render->add_option("--out", rc.out_pfm, "Output PFM path");
  render->add_option("--png", rc.out_png, "Preview PNG path (default: out with .png)");
  render->add_option("--reference", rc.reference_pfm, "Reference PFM for convergence");
  render->add_option("--convergence", rc.convergence_csv,
                     "Per-pass CSV {pass,elapsed_s,mape}; needs --reference");
  render->add_option("--stats", rc.stats_csv, "Per-bucket proxy diagnostics CSV");
  render->add_option("--proxy", proxy_switch, "on | off (proxy-bdpt only)")
      ->capture_default_str();
  render->add_option("--proxy-budget", rc.proxy_budget, "Pooled incomplete sub-paths per pass")
      ->capture_default_str();
  render->add_option("--recip-repeats", rc.recip_repeats, "Averaged reciprocal runs")
      ->capture_default_str();
  render->add_option("--freeze-iter", rc.freeze_iter, "Gamma learning passes")
      ->capture_default_str();
  render->add_option("--pretrace-paths", rc.pretrace_paths, "Statistics seeding walks")
      ->capture_default_str();
  render->add_option("--light-walks", rc.light_walks, "Pool walks per pass (0: one per pixel)")
      ->capture_default_str();

  // compare -----------------------------------------------------------------
  std::string cmp_est, cmp_ref;
  CLI::App* compare = app.add_subcommand("compare", "Print metrics between two PFMs");
  compare->add_option("estimate", cmp_est, "Estimate PFM")->required();
  compare->add_option("reference", cmp_ref, "Reference PFM")->required();

  // bench -------------------------------------------------------------------
  CLI::App* bench = app.add_subcommand("bench", "Micro-benchmarks");
  bench->require_subcommand(1);

  proxima::smis::BenchParams sp;
  std::string smis_out;
  CLI::App* bsmis = bench->add_subcommand("smis", "Stochastic-MIS benchmark CSV");
  bsmis->add_option("--k", sp.k, "Technique count")->capture_default_str();
  bsmis->add_option("--alpha", sp.alphas, "Off-segment density levels")
      ->capture_default_str();
  bsmis->add_option("--method", sp.methods, "smis<N> or recip")->capture_default_str();
  bsmis->add_option("--integrand", sp.integrands, "one | fA | fB")->capture_default_str();
  bsmis->add_option("--trials", sp.trials, "Trials per row")->capture_default_str();
  bsmis->add_option("--seed", sp.seed, "RNG seed")->capture_default_str();
  bsmis->add_option("--out", smis_out, "CSV path (default: stdout)");

  int64_t recip_trials = 100000;
  uint64_t recip_seed = 0;
  double bound_scale = 1.0;
  std::vector<double> booth_rs = {1.0, 10.0, 100.0, 1000.0};
  std::string recip_out;
  CLI::App* brecip = bench->add_subcommand("recip", "Reciprocal-estimator ablation CSV");
  brecip->add_option("--trials", recip_trials, "Trials per row")->capture_default_str();
  brecip->add_option("--seed", recip_seed, "RNG seed")->capture_default_str();
  brecip->add_option("--bound-scale", bound_scale, "B as a multiple of max(f/q)")
      ->capture_default_str();
  brecip->add_option("--booth-r", booth_rs, "Booth r grid")->capture_default_str();
  brecip->add_option("--out", recip_out, "CSV path (default: stdout)");

  // dump-stats ----------------------------------------------------------------
  std::string ds_scene, ds_out;
  int ds_paths = 20000;
  uint64_t ds_seed = 0;
  CLI::App* dump = app.add_subcommand("dump-stats", "Pretraced statistics CSV");
  dump->add_option("--scene", ds_scene, "Scene JSON path")->required();
  dump->add_option("--paths", ds_paths, "Light walks (>= 1000)")->capture_default_str();
  dump->add_option("--seed", ds_seed, "RNG seed")->capture_default_str();
  dump->add_option("--out", ds_out, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (render->parsed()) {
      if (render->get_option("--spp")->count() > 0) rc.spp = spp_flag;
      if (render->get_option("--time-budget")->count() > 0) rc.time_budget_s = budget_flag;
      std::string owner =
          rc.spp || rc.time_budget_s ? std::string("cmdline") : std::string();
      if (!config_path.empty()) overlay_json_config(*render, config_path, rc, owner);
      if (render->get_option("--proxy")->count() > 0 || proxy_switch != "on") {
        if (proxy_switch != "on" && proxy_switch != "off")
          throw ValidationError("render: --proxy must be on or off");
        rc.proxy_enabled = proxy_switch == "on";
      }
      return cmd_render(rc);
    }
    if (compare->parsed()) return cmd_compare(cmp_est, cmp_ref);
    if (bsmis->parsed()) {
      try {
        proxima::smis::TechniqueSpace::from_alpha(sp.k, sp.alphas.empty() ? 0.1 : sp.alphas[0])
            .validate();
      } catch (const std::exception& e) {
        throw ValidationError(std::string("bench smis: ") + e.what());
      }
      return cmd_bench_smis(sp, smis_out);
    }
    if (brecip->parsed())
      return cmd_bench_recip(recip_trials, recip_seed, bound_scale, booth_rs, recip_out);
    if (dump->parsed()) return cmd_dump_stats(ds_scene, ds_paths, ds_seed, ds_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
