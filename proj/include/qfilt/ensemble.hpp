#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qfilt/scenario.hpp"

namespace qfilt::sim {

enum class RunMode { Nonlinear, Linear, Dual, Counting };

RunMode parse_mode(const std::string& name);
std::string mode_name(RunMode mode);

struct RunConfig {
  Scenario scenario;
  RunMode mode = RunMode::Nonlinear;
  int trajectories = 0;               // 0: use the scenario's ensemble field
  std::optional<std::uint64_t> seed;  // override the scenario seed
  std::optional<double> dt;           // override the scenario step
  std::string outdir;                 // empty: keep everything in memory
  bool plots = false;
  int threads = 0;                    // 0: hardware concurrency
  int stride = 0;                     // checkpoint spacing in steps; 0: ~100 checkpoints

  void validate() const;
  Scenario effective_scenario() const;
  int count() const;
};

struct SeriesStat {
  std::string name;
  std::vector<double> mean, se;
};

struct EnsembleSummary {
  RunMode mode = RunMode::Nonlinear;
  int trajectories = 0;
  double dt = 0, horizon = 0;
  std::uint64_t seed = 0;
  std::vector<double> t;              // checkpoint times
  std::vector<SeriesStat> series;
  std::vector<double> purity_edges;   // 21 edges spanning [0, 1]
  std::vector<double> purity_mass;    // 20 terminal-purity masses, sum 1
  std::vector<double> innovation_mean, innovation_var;  // per channel, integrated over the horizon
  double residual_mean_max = 0;       // dual: mean over paths of the per-path max
  double residual_max = 0;            // dual: worst path
  double mean_jump_count = 0;         // counting

  const SeriesStat* find(const std::string& name) const;
  std::string to_csv() const;
  std::string to_json_text() const;
};

/* Runs the ensemble with per-trajectory counter-based RNG streams.  The
 * reduction is chunked on a fixed 64-trajectory grid and combined in index
 * order, so the result is independent of the thread count, and trajectory k
 * never changes when the ensemble grows. */
EnsembleSummary run_ensemble(const RunConfig& cfg);

struct SweepRow {
  double dt = 0;
  double residual_mean_max = 0;
  double residual_max = 0;
};

/* Repeats the dual-form run over a strictly decreasing step list and
 * collects the purity-identity residuals. */
std::vector<SweepRow> run_sweep(RunConfig base, const std::vector<double>& dts);
double fitted_order(const std::vector<SweepRow>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct OracleComparison {
  struct Row {
    std::vector<double> outcome;
    double probability = 0;
    Eigen::Vector3d oracle_p, filter_p;
    double discrepancy = 0;
  };
  std::vector<Row> rows;
  double max_discrepancy = 0;
  int bins = 0;
  double dt = 0;
  int level = 0;  // oscillator truncation per bin

  std::string table() const;
  std::string to_json_text() const;
};

/* Exhaustive comparison of the stepped filter against the spectral
 * conditional expectation on the truncated lattice, one row per joint
 * quadrature outcome.  Needs a pure initial state and a single static
 * channel. */
OracleComparison oracle_compare(const Scenario& sc, int bins, double dt, int level = 2);

}  // namespace qfilt::sim
