// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "proxima/image.hpp"

using namespace proxima;

namespace {

const std::string kBin = PROXIMA_BIN_PATH;
const std::string kScenes = PROXIMA_SCENE_DIR;

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  std::string cmd = kBin + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult res;
  char buf[512];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) res.output.append(buf, n);
  int status = pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::filesystem::path tmp(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("render is reproducible from seed and config alone") {
  auto a = tmp("cli_a.pfm"), b = tmp("cli_b.pfm");
  std::string scene = kScenes + "/furnace.json";
  REQUIRE(run("render --scene " + scene + " --algo pt --spp 2 --seed 7 --out " +
              a.string()).code == 0);
  REQUIRE(run("render --scene " + scene + " --algo pt --spp 2 --seed 7 --out " +
              b.string()).code == 0);
  CHECK(slurp(a) == slurp(b));

  // The preview PNG lands next to the PFM.
  std::string png = slurp(tmp("cli_a.png"));
  REQUIRE(png.size() > 8);
  CHECK(png.compare(0, 8, std::string("\x89PNG\r\n\x1a\n", 8)) == 0);

  // A different seed changes the image.
  REQUIRE(run("render --scene " + scene + " --algo pt --spp 2 --seed 8 --out " +
              b.string()).code == 0);
  CHECK(slurp(a) != slurp(b));

  for (auto n : {"cli_a.pfm", "cli_b.pfm", "cli_a.png", "cli_b.png"})
    std::filesystem::remove(tmp(n));
}

TEST_CASE("json config mirrors flags and flags override the file") {
  std::string scene = kScenes + "/furnace.json";
  auto cfg = tmp("cli_cfg.json");
  {
    std::ofstream os(cfg);
    os << R"({"algo": "pt", "spp": 2, "seed": 9})";
  }
  auto a = tmp("cli_cfg_a.pfm"), b = tmp("cli_cfg_b.pfm");
  REQUIRE(run("render --scene " + scene + " --config " + cfg.string() +
              " --out " + a.string()).code == 0);
  REQUIRE(run("render --scene " + scene + " --algo pt --spp 2 --seed 9 --out " +
              b.string()).code == 0);
  CHECK(slurp(a) == slurp(b));

  // --seed on the command line beats the file's seed.
  REQUIRE(run("render --scene " + scene + " --config " + cfg.string() +
              " --seed 11 --out " + a.string()).code == 0);
  REQUIRE(run("render --scene " + scene + " --algo pt --spp 2 --seed 11 --out " +
              b.string()).code == 0);
  CHECK(slurp(a) == slurp(b));

  for (auto n : {"cli_cfg.json", "cli_cfg_a.pfm", "cli_cfg_b.pfm",
                 "cli_cfg_a.png", "cli_cfg_b.png"})
    std::filesystem::remove(tmp(n));
}

TEST_CASE("proxy-bdpt equals bdpt on a scene with no specular materials") {
  std::string scene = kScenes + "/furnace.json";
  auto a = tmp("cli_nospec_a.pfm"), b = tmp("cli_nospec_b.pfm");
  REQUIRE(run("render --scene " + scene + " --algo bdpt --spp 2 --seed 3 --out " +
              a.string()).code == 0);
  REQUIRE(run("render --scene " + scene +
              " --algo proxy-bdpt --pretrace-paths 1000 --spp 2 --seed 3 --out " +
              b.string()).code == 0);
  CHECK(slurp(a) == slurp(b));
  for (auto n : {"cli_nospec_a.pfm", "cli_nospec_b.pfm", "cli_nospec_a.png",
                 "cli_nospec_b.png"})
    std::filesystem::remove(tmp(n));
}

TEST_CASE("convergence log writes one monotone row per pass") {
  std::string scene = kScenes + "/furnace.json";
  auto ref = tmp("cli_conv_ref.pfm"), out = tmp("cli_conv_out.pfm");
  auto csv = tmp("cli_conv.csv");
  REQUIRE(run("render --scene " + scene + " --algo pt --spp 4 --out " +
              ref.string()).code == 0);
  REQUIRE(run("render --scene " + scene + " --algo bdpt --spp 3 --out " +
              out.string() + " --reference " + ref.string() + " --convergence " +
              csv.string()).code == 0);

  std::string text = slurp(csv);
  REQUIRE(count_lines(text) == 4);  // header + one row per pass
  std::istringstream rows(text);
  std::string line;
  std::getline(rows, line);
  CHECK(line == "pass,elapsed_s,mape");
  int expect_pass = 1;
  double last_elapsed = 0.0;
  while (std::getline(rows, line)) {
    int pass = 0;
    double elapsed = -1.0, mape = -1.0;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf", &pass, &elapsed, &mape) == 3);
    CHECK(pass == expect_pass++);
    CHECK(elapsed >= last_elapsed);
    CHECK(mape >= 0.0);
    last_elapsed = elapsed;
  }
  CHECK(expect_pass == 4);

  for (auto n : {"cli_conv_ref.pfm", "cli_conv_out.pfm", "cli_conv_ref.png",
                 "cli_conv_out.png", "cli_conv.csv"})
    std::filesystem::remove(tmp(n));
}

TEST_CASE("time budget mode finishes and writes output") {
  std::string scene = kScenes + "/furnace.json";
  auto out = tmp("cli_budget.pfm");
  RunResult res =
      run("render --scene " + scene + " --algo pt --time-budget 0.2 --out " +
          out.string());
  CHECK(res.code == 0);
  CHECK(std::filesystem::exists(out));
  Image img = read_pfm(out.string());
  double mean = 0.0;
  for (const Vec3& p : img.pixels) mean += luminance(p);
  CHECK(mean / double(img.pixels.size()) > 0.0);
  std::filesystem::remove(out);
  std::filesystem::remove(tmp("cli_budget.png"));
}

TEST_CASE("compare prints the hand-computed metrics") {
  auto est = tmp("cli_cmp_est.pfm"), ref = tmp("cli_cmp_ref.pfm");
  Image e(2, 1), r(2, 1);
  e.at(0, 0) = Vec3(1, 1, 1);
  e.at(1, 0) = Vec3(3, 3, 3);
  r.at(0, 0) = Vec3(2, 2, 2);
  r.at(1, 0) = Vec3(4, 4, 4);
  write_pfm(e, est.string());
  write_pfm(r, ref.string());

  RunResult res = run("compare " + est.string() + " " + ref.string());
  CHECK(res.code == 0);
  CHECK(res.output.find("mape=0.375") != std::string::npos);

  RunResult same = run("compare " + ref.string() + " " + ref.string());
  CHECK(same.code == 0);
  CHECK(same.output.find("mape=0 ") != std::string::npos);
  CHECK(same.output.find("mse=0 ") != std::string::npos);

  std::filesystem::remove(est);
  std::filesystem::remove(ref);
}

TEST_CASE("bench recip emits the ablation grid with a zero-variance row") {
  RunResult res = run("bench recip --trials 4000 --seed 5");
  REQUIRE(res.code == 0);
  REQUIRE(res.output.find(
              "fixture,method,r_param,bound,mean,variance,mean_cost,"
              "efficiency,truncated_fraction") != std::string::npos);
  for (const char* needle :
       {"atoms13,ours", "atoms13,sign", "atoms13,booth,1,", "atoms13,booth,1000,",
        "linear2x,ours", "proportional,ours"})
    CHECK(res.output.find(needle) != std::string::npos);

  // f proportional to q at B = max(f/q): every run returns exactly 1/B.
  size_t at = res.output.find("proportional,ours");
  REQUIRE(at != std::string::npos);
  std::string row = res.output.substr(at, res.output.find('\n', at) - at);
  std::vector<std::string> cells;
  std::istringstream split(row);
  for (std::string cell; std::getline(split, cell, ',');) cells.push_back(cell);
  REQUIRE(cells.size() == 9);
  CHECK(cells[5] == "0");                       // variance
  // The CSV carries six significant digits.
  CHECK(std::stod(cells[4]) == doctest::Approx(1.0 / 1.5).epsilon(1e-5));
}

TEST_CASE("bench smis emits rows for the requested grid") {
  RunResult res = run(
      "bench smis --trials 2000 --alpha 0.1 --method smis1 --method recip "
      "--integrand one --seed 2");
  REQUIRE(res.code == 0);
  CHECK(res.output.find("method,alpha,beta,integrand,variance,mean_cost,bias") !=
        std::string::npos);
  CHECK(res.output.find("smis1,0.1,") != std::string::npos);
  CHECK(res.output.find("recip,0.1,") != std::string::npos);
  CHECK(count_lines(res.output) == 3);
}

TEST_CASE("dump-stats writes the per-bucket table") {
  RunResult res = run("dump-stats --scene " + kScenes +
                      "/mirror-box.json --paths 2000 --seed 1");
  REQUIRE(res.code == 0);
  CHECK(res.output.find("u,c,s,ratio_count,max_f_over_q,b_bound") !=
        std::string::npos);
  CHECK(count_lines(res.output) >= 2);
}

TEST_CASE("validation failures exit with 2 and runtime failures with 1") {
  std::string scene = kScenes + "/furnace.json";
  auto out = tmp("cli_err.pfm");

  CHECK(run("render --scene " + scene + " --spp 1 --time-budget 1 --out " +
            out.string()).code == 2);
  CHECK(run("render --scene " + scene + " --algo warp --spp 1 --out " +
            out.string()).code == 2);
  CHECK(run("render --scene " + scene + " --spp 0 --out " + out.string()).code == 2);
  CHECK(run("render --scene " + scene + " --spp 1").code == 2);  // no --out
  CHECK(run("render --scene " + scene + " --spp 1 --out " + out.string() +
            " --convergence c.csv").code == 2);  // convergence without reference
  CHECK(run("render --scene " + scene + " --spp 1 --out " + out.string() +
            " --proxy maybe").code == 2);
  CHECK(run("nonsense").code == 2);
  CHECK(run("bench recip --trials 1").code == 2);
  CHECK(run("bench smis --k 0").code == 2);
  CHECK(run("dump-stats --scene " + scene + " --paths 10").code == 2);

  CHECK(run("render --scene /nonexistent.json --spp 1 --out " + out.string())
            .code == 1);
  CHECK(run("compare /nonexistent_a.pfm /nonexistent_b.pfm").code == 1);

  std::filesystem::remove(out);
}
