#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qfilt/ensemble.hpp"
#include "qfilt/rng.hpp"
#include "qfilt/scenario.hpp"
#include "qfilt/svg_plot.hpp"
#include "qfilt/verify.hpp"

using namespace qfilt;
using namespace qfilt::sim;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

fs::path fresh_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "qfilt_test_sim" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kSpinJson = R"({
  "kind": "spin",
  "p0": [0.6, 0.0, 0.3],
  "horizon": 0.5,
  "dt": 0.002,
  "seed": 5,
  "ensemble": 64,
  "u": [0.0, 1.0, 0.5],
  "r": [[0.0, 0.0, 1.2]]
})";

const char* kCountingJson = R"({
  "kind": "counting",
  "p0": [0.0, 0.0, 1.0],
  "horizon": 3.0,
  "dt": 0.001,
  "seed": 11,
  "ensemble": 300,
  "gamma": 1.0
})";

}  // namespace

TEST_CASE("counter-based generator matches the published test vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  A4 z = rng::Philox::block(A4{0, 0, 0, 0}, A2{0, 0});
  CHECK(z == A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  A4 f = rng::Philox::block(A4{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                            A2{0xffffffffu, 0xffffffffu});
  CHECK(f == A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  A4 pi = rng::Philox::block(A4{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                             A2{0xa4093822u, 0x299f31d0u});
  CHECK(pi == A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("uniform and normal draws have the expected gross statistics") {
  rng::Philox gen(2024, 7);
  double umin = 1.0, umax = 0.0, usum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = gen.uniform();
    CHECK(u > 0.0);
    CHECK(u <= 1.0);
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    usum += u;
  }
  CHECK(umin < 0.01);
  CHECK(umax > 0.99);
  CHECK(std::abs(usum / 20000 - 0.5) < 0.01);

  double nsum = 0.0, nsq = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = gen.normal();
    nsum += x;
    nsq += x * x;
  }
  CHECK(std::abs(nsum / 20000) < 0.02);
  CHECK(std::abs(nsq / 20000 - 1.0) < 0.03);
}

TEST_CASE("independent streams differ and fixed streams replay") {
  rng::Philox a(1, 0), b(1, 1), c(1, 0);
  bool differ = false;
  for (int i = 0; i < 8; ++i) {
    const auto x = a.next_u64();
    differ |= x != b.next_u64();
    CHECK(x == c.next_u64());
  }
  CHECK(differ);
}

TEST_CASE("scenario files parse, validate and round-trip") {
  auto sc = scenario_from_json_text(kSpinJson);
  CHECK(sc.kind == Scenario::Kind::Spin);
  CHECK(sc.spin.channels() == 1);
  CHECK(sc.spin.steps() == 250);
  CHECK(sc.spin.seed == 5);
  CHECK(sc.spin.u.at(0.0)(1) == 1.0);

  auto rt = scenario_from_json_text(scenario_to_json_text(sc));
  CHECK(rt.spin.p0 == sc.spin.p0);
  CHECK(rt.spin.dt == sc.spin.dt);

  auto table = scenario_from_json_text(R"({
    "horizon": 1.0, "dt": 0.01,
    "u": {"t": [0.0, 0.5], "v": [[0,0,1],[0,0,-1]]},
    "r": [[0,0,2]]
  })");
  CHECK(table.spin.u.at(0.4)(2) == 1.0);
  CHECK(table.spin.u.at(0.6)(2) == -1.0);

  auto counting = scenario_from_json_text(kCountingJson);
  CHECK(counting.kind == Scenario::Kind::Counting);
  auto eng = build_engine(counting);
  CHECK(eng.n_obs() == 1);
}

TEST_CASE("scenario parsing rejects malformed input") {
  CHECK_THROWS_AS(scenario_from_json_text("not json at all"), std::invalid_argument);
  CHECK_THROWS_AS(scenario_from_json_text(R"({"horizon": 1.0})"), std::invalid_argument);
  CHECK_THROWS_AS(scenario_from_json_text(R"({"horizon": 1, "dt": 0.1, "typo": 3})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(scenario_from_json_text(R"({"kind": "alien", "horizon": 1, "dt": 0.1})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      scenario_from_json_text(R"({"horizon": 1, "dt": 0.1, "p0": [2, 0, 0]})"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      scenario_from_json_text(R"({"horizon": 1, "dt": 0.1, "u": [1, 2]})"),
      std::invalid_argument);
  CHECK_THROWS_AS(scenario_from_json_text(
                      R"({"kind": "counting", "horizon": 1, "dt": 0.1, "r": [[0,0,1]]})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(scenario_from_json_text(
                      R"({"kind": "counting", "horizon": 1, "dt": 0.1, "gamma": -2})"),
                  std::invalid_argument);
}

TEST_CASE("mode names parse both ways") {
  CHECK(parse_mode("dual") == RunMode::Dual);
  CHECK(mode_name(parse_mode("counting")) == "counting");
  CHECK_THROWS_AS(parse_mode("hybrid"), std::invalid_argument);

  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kSpinJson);
  cfg.mode = RunMode::Counting;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.scenario = scenario_from_json_text(kCountingJson);
  cfg.mode = RunMode::Nonlinear;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("ensemble summary has coherent shapes and masses") {
  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kSpinJson);
  cfg.stride = 50;
  auto sum = run_ensemble(cfg);
  CHECK(sum.trajectories == 64);
  CHECK(sum.t.front() == 0.0);
  CHECK(sum.t.back() == doctest::Approx(0.5));
  CHECK(sum.t.size() == 6);  // 0, 50, 100, 150, 200, 250
  REQUIRE(sum.series.size() == 4);
  for (const auto& s : sum.series) {
    CHECK(s.mean.size() == sum.t.size());
    CHECK(s.se.size() == sum.t.size());
    for (double v : s.se) CHECK(v >= 0.0);
  }
  CHECK(sum.series[0].mean[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(sum.series[0].se[0] == 0.0);  // all paths share the initial state
  double mass = 0.0;
  for (double m : sum.purity_mass) mass += m;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(sum.innovation_mean.size() == 1);
  CHECK(std::abs(sum.innovation_mean[0]) < 0.5);
}

TEST_CASE("trajectory k is stable when the ensemble grows") {
  RunConfig small;
  small.scenario = scenario_from_json_text(kSpinJson);
  small.trajectories = 3;
  small.stride = 100;
  small.outdir = fresh_dir("prefix_small").string();
  run_ensemble(small);

  RunConfig big = small;
  big.trajectories = 5;
  big.outdir = fresh_dir("prefix_big").string();
  run_ensemble(big);

  auto small_lines = lines_of(slurp(fs::path(small.outdir) / "trajectories.jsonl"));
  auto big_lines = lines_of(slurp(fs::path(big.outdir) / "trajectories.jsonl"));
  REQUIRE(small_lines.size() == 3);
  REQUIRE(big_lines.size() == 5);
  for (int i = 0; i < 3; ++i) CHECK(small_lines[i] == big_lines[i]);
}

TEST_CASE("identical configurations produce byte-identical artifacts") {
  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kSpinJson);
  cfg.trajectories = 8;
  cfg.stride = 50;
  cfg.plots = true;
  cfg.outdir = fresh_dir("bytes_a").string();
  run_ensemble(cfg);
  RunConfig cfg2 = cfg;
  cfg2.outdir = fresh_dir("bytes_b").string();
  run_ensemble(cfg2);

  for (const char* name :
       {"trajectories.jsonl", "summary.csv", "summary.json", "scenario.json", "mean.svg"}) {
    CAPTURE(name);
    CHECK(slurp(fs::path(cfg.outdir) / name) == slurp(fs::path(cfg2.outdir) / name));
  }
}

TEST_CASE("thread count does not change the reduction") {
  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kSpinJson);
  cfg.trajectories = 130;  // spans three chunks
  cfg.threads = 1;
  auto a = run_ensemble(cfg);
  cfg.threads = 4;
  auto b = run_ensemble(cfg);
  for (std::size_t si = 0; si < a.series.size(); ++si)
    for (std::size_t i = 0; i < a.series[si].mean.size(); ++i) {
      CHECK(a.series[si].mean[i] == b.series[si].mean[i]);
      CHECK(a.series[si].se[i] == b.series[si].se[i]);
    }
}

TEST_CASE("raw-noise linear weight is a mean-one martingale") {
  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kSpinJson);
  cfg.mode = RunMode::Linear;
  cfg.trajectories = 400;
  auto sum = run_ensemble(cfg);
  const auto* rho = sum.find("rho");
  REQUIRE(rho != nullptr);
  CHECK(rho->mean.front() == 1.0);
  CHECK(std::abs(rho->mean.back() - 1.0) < 3.0 * rho->se.back() + 1e-9);
}

TEST_CASE("dual mode tracks the purity identity") {
  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kSpinJson);
  cfg.mode = RunMode::Dual;
  cfg.trajectories = 100;
  auto sum = run_ensemble(cfg);
  CHECK(sum.residual_mean_max > 0.0);
  CHECK(sum.residual_mean_max < 5.0 * std::sqrt(sum.dt));
  CHECK(sum.residual_max < 15.0 * std::sqrt(sum.dt));
  const auto* imp = sum.find("impurity");
  const auto* fc = sum.find("forecast");
  REQUIRE(imp != nullptr);
  REQUIRE(fc != nullptr);
  CHECK(std::abs(imp->mean.back() - fc->mean.back()) < 0.1);
  REQUIRE(sum.innovation_var.size() == 1);
  CHECK(sum.innovation_var[0] > 0.2);
  CHECK(sum.innovation_var[0] < 0.9);  // roughly the horizon 0.5
}

TEST_CASE("step sweep shrinks the residual at a positive measured order") {
  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kSpinJson);
  cfg.trajectories = 80;
  auto rows = run_sweep(cfg, {4e-3, 2e-3, 1e-3});
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].residual_mean_max < rows[0].residual_mean_max);
  CHECK(rows[2].residual_mean_max < rows[1].residual_mean_max);
  CHECK(fitted_order(rows) > 0.3);
  auto csv = sweep_csv(rows);
  CHECK(csv.rfind("dt,residual_mean_max,residual_max\n", 0) == 0);
  CHECK(lines_of(csv).size() == 4);

  CHECK_THROWS_AS(run_sweep(cfg, {1e-3, 2e-3}), std::invalid_argument);
  CHECK_THROWS_AS(run_sweep(cfg, {}), std::invalid_argument);
}

TEST_CASE("counting ensemble decays to the ground state through exact resets") {
  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kCountingJson);
  cfg.mode = RunMode::Counting;
  cfg.stride = 500;
  cfg.outdir = fresh_dir("counting").string();
  auto sum = run_ensemble(cfg);

  const double horizon = sum.horizon;
  const double p_nojump = std::exp(-horizon);
  const auto* p3 = sum.find("p3");
  REQUIRE(p3 != nullptr);
  const double expect = 2.0 * p_nojump - 1.0;
  CHECK(std::abs(p3->mean.back() - expect) < 3.0 * p3->se.back() + 0.02);
  CHECK(std::abs(sum.mean_jump_count - (1.0 - p_nojump)) < 0.05);
  CHECK(sum.purity_mass.back() == doctest::Approx(1.0).epsilon(1e-12));

  // every checkpointed posterior sits exactly on a pole
  for (const auto& line : lines_of(slurp(fs::path(cfg.outdir) / "trajectories.jsonl"))) {
    auto j = nlohmann::json::parse(line);
    for (double v : j["p3"]) CHECK((v == 1.0 || v == -1.0));
  }
}

TEST_CASE("oracle comparison stays close to the filter on coarse bins") {
  Scenario sc;
  sc.spin.p0 = {1, 0, 0};
  sc.spin.rs = {spin::Schedule3::constant({0, 0, 0.8})};
  sc.spin.dt = 0.05;
  sc.spin.horizon = 0.1;
  auto cmp = oracle_compare(sc, 2, 0.05, 2);
  CHECK(cmp.rows.size() == 9);
  double mass = 0.0;
  for (const auto& r : cmp.rows) mass += r.probability;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cmp.max_discrepancy < 0.15);
  CHECK(cmp.table().find("max discrepancy") != std::string::npos);
  CHECK(cmp.to_json_text().find("\"rows\"") != std::string::npos);

  Scenario mixed = sc;
  mixed.spin.p0 = {0.5, 0, 0};
  CHECK_THROWS_AS(oracle_compare(mixed, 2, 0.05, 2), std::invalid_argument);
}

TEST_CASE("svg output is well formed") {
  SvgPlot plot("demo", "t", "value");
  plot.add(Series{"a", {0, 1, 2}, {0.5, -0.25, 1.0}, ""});
  plot.add(Band{"", {0, 1, 2}, {0.4, -0.35, 0.9}, {0.6, -0.15, 1.1}, ""});
  auto svg = plot.render();
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("<polygon") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);

  CHECK_THROWS_AS(plot.add(Series{"bad", {0, 1}, {0}, ""}), std::invalid_argument);

  // single-trajectory run still renders
  RunConfig cfg;
  cfg.scenario = scenario_from_json_text(kSpinJson);
  cfg.trajectories = 1;
  cfg.plots = true;
  cfg.outdir = fresh_dir("single_plot").string();
  run_ensemble(cfg);
  CHECK(fs::exists(fs::path(cfg.outdir) / "mean.svg"));
  CHECK(fs::exists(fs::path(cfg.outdir) / "purity_hist.svg"));
}

TEST_CASE("identity battery passes and reports every residual") {
  auto checks = algebra_battery();
  CHECK(checks.size() >= 10);
  CHECK(all_pass(checks));
  auto report = battery_report(checks);
  for (const auto& c : checks) {
    CAPTURE(c.name);
    CHECK(report.find(c.name) != std::string::npos);
  }
  CHECK(report.find("FAIL") == std::string::npos);
}
