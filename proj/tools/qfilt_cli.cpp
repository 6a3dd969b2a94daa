#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "qfilt/ensemble.hpp"
#include "qfilt/scenario.hpp"
#include "qfilt/verify.hpp"

namespace {

using namespace qfilt;

sim::Scenario default_probe_scenario(double dt, int bins) {
  sim::Scenario sc;
  sc.name = "probe";
  sc.spin.p0 = {1, 0, 0};
  sc.spin.rs = {spin::Schedule3::constant({0, 0, 0.8})};
  sc.spin.dt = dt;
  sc.spin.horizon = bins * dt;
  return sc;
}

void print_summary(const sim::EnsembleSummary& sum) {
  std::printf("mode %s, %d trajectories, dt %g, horizon %g, seed %llu\n",
              sim::mode_name(sum.mode).c_str(), sum.trajectories, sum.dt, sum.horizon,
              static_cast<unsigned long long>(sum.seed));
  std::printf("terminal means:");
  for (const auto& s : sum.series)
    std::printf("  %s %.6f (se %.2e)", s.name.c_str(), s.mean.back(), s.se.back());
  std::printf("\n");
  for (std::size_t i = 0; i < sum.innovation_mean.size(); ++i)
    std::printf("channel %zu integrated innovation: mean %+.4e, var %.4f\n", i + 1,
                sum.innovation_mean[i], sum.innovation_var[i]);
  if (sum.mode == sim::RunMode::Dual)
    std::printf("purity-identity residual: mean max %.4e, worst path %.4e\n",
                sum.residual_mean_max, sum.residual_max);
  if (sum.mode == sim::RunMode::Counting)
    std::printf("mean detections per trajectory: %.4f\n", sum.mean_jump_count);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantum trajectory simulator for continuously observed qubits"};
  app.require_subcommand(1);
  app.footer(
      "Environment: QFILT_DIM_CAP bounds the lattice state dimension,\n"
      "QFILT_OP_DIM_CAP the dense-operator dimension used by the oracle.");

  auto* run = app.add_subcommand("run", "simulate an ensemble from a scenario file");
  std::string scenario_path, mode_str = "nonlinear", outdir;
  int ensemble = 0, threads = 0, stride = 0;
  std::uint64_t seed = 0;
  double dt_override = 0;
  bool plots = false;
  run->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  run->add_option("--mode", mode_str, "nonlinear, linear, dual or counting");
  run->add_option("--ensemble", ensemble, "trajectory count override");
  auto* seed_opt = run->add_option("--seed", seed, "master seed override");
  auto* dt_opt = run->add_option("--dt", dt_override, "time step override");
  run->add_option("--out", outdir, "artifact directory (JSONL, CSV, JSON)");
  run->add_flag("--plots", plots, "also write SVG plots");
  run->add_option("--threads", threads, "worker threads, 0 = all cores");
  run->add_option("--stride", stride, "checkpoint spacing in steps");

  auto* verify = app.add_subcommand("verify", "run the identity battery and report residuals");

  auto* oc = app.add_subcommand("oracle-compare",
                                "conditional-expectation table: lattice vs filter");
  std::string oc_scenario, oc_out;
  int bins = 2, level = 2;
  double oc_dt = 0.05;
  oc->add_option("--scenario", oc_scenario,
                 "scenario JSON (default: x-polarized state, r = (0,0,2))");
  oc->add_option("--bins", bins, "number of time bins");
  oc->add_option("--dt", oc_dt, "bin width");
  oc->add_option("--level", level, "oscillator truncation per bin");
  oc->add_option("--out", oc_out, "write the table as JSON here");

  auto* sweep = app.add_subcommand("sweep", "purity-identity residual over a dt sweep");
  std::string sw_scenario, sw_out;
  std::vector<double> dts;
  int sw_ensemble = 0, sw_threads = 0;
  std::uint64_t sw_seed = 0;
  sweep->add_option("--scenario", sw_scenario, "scenario JSON file")->required();
  sweep->add_option("--dt-sweep", dts, "strictly decreasing steps")
      ->required()
      ->delimiter(',');
  sweep->add_option("--ensemble", sw_ensemble, "paths per step size");
  auto* sw_seed_opt = sweep->add_option("--seed", sw_seed, "master seed override");
  sweep->add_option("--out", sw_out, "directory for sweep.csv");
  sweep->add_option("--threads", sw_threads, "worker threads, 0 = all cores");
  bool sw_plots = false;
  sweep->add_flag("--plots", sw_plots, "also write sweep.svg");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      sim::RunConfig cfg;
      cfg.scenario = sim::load_scenario(scenario_path);
      cfg.mode = sim::parse_mode(mode_str);
      cfg.trajectories = ensemble;
      if (seed_opt->count()) cfg.seed = seed;
      if (dt_opt->count()) cfg.dt = dt_override;
      cfg.outdir = outdir;
      cfg.plots = plots;
      cfg.threads = threads;
      cfg.stride = stride;
      const auto sum = sim::run_ensemble(cfg);
      print_summary(sum);
      if (!outdir.empty()) std::printf("artifacts written to %s\n", outdir.c_str());
      return 0;
    }
    if (verify->parsed()) {
      const auto checks = sim::algebra_battery();
      std::fputs(sim::battery_report(checks).c_str(), stdout);
      return sim::all_pass(checks) ? 0 : 1;
    }
    if (oc->parsed()) {
      const sim::Scenario sc = oc_scenario.empty() ? default_probe_scenario(oc_dt, bins)
                                                   : sim::load_scenario(oc_scenario);
      const auto cmp = sim::oracle_compare(sc, bins, oc_dt, level);
      std::fputs(cmp.table().c_str(), stdout);
      if (!oc_out.empty()) {
        std::filesystem::create_directories(
            std::filesystem::path(oc_out).parent_path().empty()
                ? "."
                : std::filesystem::path(oc_out).parent_path().string());
        std::ofstream f(oc_out, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + oc_out + " for writing");
        f << cmp.to_json_text();
      }
      return 0;
    }
    if (sweep->parsed()) {
      sim::RunConfig cfg;
      cfg.scenario = sim::load_scenario(sw_scenario);
      cfg.trajectories = sw_ensemble;
      if (sw_seed_opt->count()) cfg.seed = sw_seed;
      cfg.outdir = sw_out;
      cfg.plots = sw_plots;
      cfg.threads = sw_threads;
      cfg.mode = sim::RunMode::Dual;
      const auto rows = sim::run_sweep(cfg, dts);
      std::fputs(sim::sweep_csv(rows).c_str(), stdout);
      std::printf("fitted convergence order: %.3f\n", sim::fitted_order(rows));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
