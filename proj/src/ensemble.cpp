#include "qfilt/ensemble.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "qfilt/noise_lattice.hpp"
#include "qfilt/rng.hpp"
#include "qfilt/spin.hpp"
#include "qfilt/svg_plot.hpp"

namespace qfilt::sim {

using nlohmann::json;

namespace {

constexpr int kChunk = 64;  // fixed reduction granularity, independent of threads

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Mat bloch_density(const Eigen::Vector3d& p) {
  auto s = pauli();
  return 0.5 * (Mat::Identity(2, 2) + p(0) * s[0] + p(1) * s[1] + p(2) * s[2]);
}

std::vector<std::string> series_names(RunMode mode) {
  switch (mode) {
    case RunMode::Nonlinear: return {"p1", "p2", "p3", "purity"};
    case RunMode::Linear: return {"f1", "f2", "f3", "rho"};
    case RunMode::Dual:
      return {"p1", "p2", "p3", "purity", "rho", "impurity", "forecast", "residual"};
    case RunMode::Counting: return {"p1", "p2", "p3", "purity", "count"};
  }
  return {};
}

struct Grid {
  int steps = 0;
  double dt = 0;
  std::vector<int> cp_idx;    // ascending state indices, first 0, last steps
  std::vector<double> cp_t;
};

Grid make_grid(int steps, double dt, int stride) {
  Grid g;
  g.steps = steps;
  g.dt = dt;
  if (stride <= 0) stride = std::max(1, steps / 100);
  for (int i = 0; i < steps; i += stride) g.cp_idx.push_back(i);
  g.cp_idx.push_back(steps);
  for (int idx : g.cp_idx) g.cp_t.push_back(idx * dt);
  return g;
}

struct Ctx {
  const Scenario* sc = nullptr;
  const filter::FilterEngine* eng = nullptr;
  RunMode mode = RunMode::Nonlinear;
  Grid grid;
  std::uint64_t seed = 0;
  filter::StepOptions opt;
  filter::FilterState s0;
  filter::FilterEngine::LinearState l0;
  int channels = 0;
  std::vector<double> lambda;  // per state index, dual mode
  double base_gap = 0;         // 1 - |p0|^2
};

struct TrajOut {
  std::vector<double> vals;  // series-major: s * ncp + c
  double terminal_purity = 0;
  std::vector<double> innov;
  double res_max = 0;
  double jumps = 0;
  std::vector<double> jump_times;
};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

TrajOut run_one(const Ctx& ctx, int traj) {
  const auto& eng = *ctx.eng;
  const Grid& g = ctx.grid;
  const int m = ctx.channels;
  const int ncp = static_cast<int>(g.cp_idx.size());
  const std::size_t ns = series_names(ctx.mode).size();
  const double dt = g.dt;
  const double rdt = std::sqrt(dt);

  TrajOut out;
  out.vals.assign(ns * static_cast<std::size_t>(ncp), 0.0);
  out.innov.assign(static_cast<std::size_t>(m), 0.0);
  rng::Philox gen(ctx.seed, static_cast<std::uint64_t>(traj));

  auto put = [&](std::size_t series, int cp, double v) {
    out.vals[series * static_cast<std::size_t>(ncp) + static_cast<std::size_t>(cp)] = v;
  };

  int cp = 0;
  auto s = ctx.s0;
  auto ls = ctx.l0;
  RVec xi(m), dy(m), comp(m), uni(m);
  double jump_count = 0;

  auto record = [&](int state_idx) {
    if (cp >= ncp || g.cp_idx[cp] != state_idx) return;
    switch (ctx.mode) {
      case RunMode::Nonlinear: {
        const double n2 = s.e(1) * s.e(1) + s.e(2) * s.e(2) + s.e(3) * s.e(3);
        put(0, cp, s.e(1));
        put(1, cp, s.e(2));
        put(2, cp, s.e(3));
        put(3, cp, 0.5 * (1.0 + n2));
        break;
      }
      case RunMode::Linear: {
        put(0, cp, ls.g(1));
        put(1, cp, ls.g(2));
        put(2, cp, ls.g(3));
        put(3, cp, ls.g(0));
        break;
      }
      case RunMode::Dual: {
        const double n2 = s.e(1) * s.e(1) + s.e(2) * s.e(2) + s.e(3) * s.e(3);
        const double rho = ls.g(0);
        put(0, cp, s.e(1));
        put(1, cp, s.e(2));
        put(2, cp, s.e(3));
        put(3, cp, 0.5 * (1.0 + n2));
        put(4, cp, rho);
        put(5, cp, 1.0 - n2);
        put(6, cp, std::exp(-ctx.lambda[static_cast<std::size_t>(state_idx)]) *
                       ctx.base_gap / (rho * rho));
        const double gap = rho * rho -
                           (ls.g(1) * ls.g(1) + ls.g(2) * ls.g(2) + ls.g(3) * ls.g(3));
        put(7, cp,
            gap - std::exp(-ctx.lambda[static_cast<std::size_t>(state_idx)]) * ctx.base_gap);
        break;
      }
      case RunMode::Counting: {
        const double n2 = s.e(1) * s.e(1) + s.e(2) * s.e(2) + s.e(3) * s.e(3);
        put(0, cp, s.e(1));
        put(1, cp, s.e(2));
        put(2, cp, s.e(3));
        put(3, cp, 0.5 * (1.0 + n2));
        put(4, cp, jump_count);
        break;
      }
    }
    ++cp;
  };

  record(0);
  for (int k = 0; k < g.steps; ++k) {
    switch (ctx.mode) {
      case RunMode::Nonlinear: {
        for (int i = 0; i < m; ++i) xi(i) = gen.normal();
        comp = eng.compensators(s);
        s = eng.step_diffusive(s, xi, dt, &dy, ctx.opt);
        for (int i = 0; i < m; ++i) out.innov[static_cast<std::size_t>(i)] += dy(i) - comp(i) * dt;
        break;
      }
      case RunMode::Linear: {
        for (int i = 0; i < m; ++i) dy(i) = gen.normal() * rdt;
        ls = eng.linear_step(ls, dy, dt);
        if (!(ls.g(0) > 0.0))
          throw std::domain_error("linear weight lost positivity at t = " +
                                  std::to_string(ls.t));
        break;
      }
      case RunMode::Dual: {
        for (int i = 0; i < m; ++i) xi(i) = gen.normal();
        comp = eng.compensators(s);
        s = eng.step_diffusive(s, xi, dt, &dy, ctx.opt);
        for (int i = 0; i < m; ++i) out.innov[static_cast<std::size_t>(i)] += dy(i) - comp(i) * dt;
        ls = eng.linear_step(ls, dy, dt);
        if (!(ls.g(0) > 0.0))
          throw std::domain_error("linear weight lost positivity at t = " +
                                  std::to_string(ls.t));
        const double rho = ls.g(0);
        const double gap =
            rho * rho - (ls.g(1) * ls.g(1) + ls.g(2) * ls.g(2) + ls.g(3) * ls.g(3));
        const double res =
            gap - std::exp(-ctx.lambda[static_cast<std::size_t>(k) + 1]) * ctx.base_gap;
        out.res_max = std::max(out.res_max, std::abs(res));
        break;
      }
      case RunMode::Counting: {
        for (int i = 0; i < m; ++i) uni(i) = gen.uniform();
        comp = eng.compensators(s);
        s = eng.step_counting(s, uni, dt, &dy, ctx.opt);
        for (int i = 0; i < m; ++i) {
          out.innov[static_cast<std::size_t>(i)] += dy(i) - comp(i) * dt;
          if (dy(i) > 0.5) {
            jump_count += dy(i);
            out.jump_times.push_back(s.t);
          }
        }
        break;
      }
    }
    record(k + 1);
  }

  if (ctx.mode == RunMode::Linear) {
    const Eigen::Vector3d p(ls.g(1) / ls.g(0), ls.g(2) / ls.g(0), ls.g(3) / ls.g(0));
    out.terminal_purity = clamp01(0.5 * (1.0 + p.squaredNorm()));
  } else {
    out.terminal_purity =
        clamp01(0.5 * (1.0 + s.e(1) * s.e(1) + s.e(2) * s.e(2) + s.e(3) * s.e(3)));
  }
  out.jumps = jump_count;
  return out;
}

struct Accum {
  std::vector<double> sum, sumsq;
  std::vector<std::int64_t> hist = std::vector<std::int64_t>(20, 0);
  std::vector<double> innov_sum, innov_sq;
  double res_sum_max = 0, res_max = 0;
  double jump_sum = 0;
  std::string jsonl;
};

std::string trajectory_line(const Ctx& ctx, int traj, const TrajOut& o) {
  const auto names = series_names(ctx.mode);
  const std::size_t ncp = ctx.grid.cp_idx.size();
  json j;
  j["traj"] = traj;
  j["t"] = ctx.grid.cp_t;
  for (std::size_t si = 0; si < names.size(); ++si) {
    std::vector<double> col(o.vals.begin() + static_cast<std::ptrdiff_t>(si * ncp),
                            o.vals.begin() + static_cast<std::ptrdiff_t>((si + 1) * ncp));
    j[names[si]] = col;
  }
  if (ctx.mode == RunMode::Counting) j["jumps"] = o.jump_times;
  return j.dump() + "\n";
}

void fold(const Ctx& ctx, Accum& acc, int traj, const TrajOut& o, bool want_line) {
  if (acc.sum.empty()) {
    acc.sum.assign(o.vals.size(), 0.0);
    acc.sumsq.assign(o.vals.size(), 0.0);
    acc.innov_sum.assign(o.innov.size(), 0.0);
    acc.innov_sq.assign(o.innov.size(), 0.0);
  }
  for (std::size_t i = 0; i < o.vals.size(); ++i) {
    acc.sum[i] += o.vals[i];
    acc.sumsq[i] += o.vals[i] * o.vals[i];
  }
  const int bin = std::min(19, static_cast<int>(o.terminal_purity * 20.0));
  ++acc.hist[static_cast<std::size_t>(bin)];
  for (std::size_t i = 0; i < o.innov.size(); ++i) {
    acc.innov_sum[i] += o.innov[i];
    acc.innov_sq[i] += o.innov[i] * o.innov[i];
  }
  acc.res_sum_max += o.res_max;
  acc.res_max = std::max(acc.res_max, o.res_max);
  acc.jump_sum += o.jumps;
  if (want_line) acc.jsonl += trajectory_line(ctx, traj, o);
}

void emit_plots(const EnsembleSummary& sum, const Scenario& sc, const std::string& outdir) {
  namespace fs = std::filesystem;
  const std::string title = sc.name.empty() ? mode_name(sum.mode) : sc.name;

  SvgPlot mean_plot(title + ": ensemble mean", "t");
  for (std::size_t si = 0; si < sum.series.size() && si < 3; ++si) {
    const auto& s = sum.series[si];
    Band b;
    b.x = sum.t;
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
      b.lo.push_back(s.mean[i] - 2.0 * s.se[i]);
      b.hi.push_back(s.mean[i] + 2.0 * s.se[i]);
    }
    mean_plot.add(std::move(b));
    mean_plot.add(Series{s.name, sum.t, s.mean, ""});
  }
  mean_plot.write((fs::path(outdir) / "mean.svg").string());

  SvgPlot hist_plot(title + ": terminal purity", "purity", "mass");
  Series hs;
  hs.label = "mass";
  for (std::size_t b = 0; b < sum.purity_mass.size(); ++b) {
    // step outline of the histogram
    hs.x.push_back(sum.purity_edges[b]);
    hs.y.push_back(sum.purity_mass[b]);
    hs.x.push_back(sum.purity_edges[b + 1]);
    hs.y.push_back(sum.purity_mass[b]);
  }
  hist_plot.add(std::move(hs));
  hist_plot.write((fs::path(outdir) / "purity_hist.svg").string());

  if (sum.mode == RunMode::Dual) {
    SvgPlot overlay(title + ": purity decay", "t");
    if (const auto* imp = sum.find("impurity"))
      overlay.add(Series{"mean 1-|p|^2", sum.t, imp->mean, ""});
    if (const auto* fc = sum.find("forecast"))
      overlay.add(Series{"exp(-lambda) forecast", sum.t, fc->mean, ""});
    overlay.write((fs::path(outdir) / "purity_overlay.svg").string());

    SvgPlot lam(title + ": accumulated measurement strength", "t", "lambda");
    std::vector<double> lv;
    for (double tv : sum.t) lv.push_back(spin::lambda_at(sc.spin, tv));
    lam.add(Series{"lambda", sum.t, lv, ""});
    lam.write((fs::path(outdir) / "lambda.svg").string());
  }
  if (sum.mode == RunMode::Counting) {
    if (const auto* cnt = sum.find("count")) {
      SvgPlot cp(title + ": mean cumulative detections", "t", "count");
      cp.add(Series{"count", sum.t, cnt->mean, ""});
      cp.write((fs::path(outdir) / "count.svg").string());
    }
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
}

}  // namespace

RunMode parse_mode(const std::string& name) {
  if (name == "nonlinear") return RunMode::Nonlinear;
  if (name == "linear") return RunMode::Linear;
  if (name == "dual") return RunMode::Dual;
  if (name == "counting") return RunMode::Counting;
  throw std::invalid_argument("unknown mode \"" + name +
                              "\" (expected nonlinear, linear, dual or counting)");
}

std::string mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::Nonlinear: return "nonlinear";
    case RunMode::Linear: return "linear";
    case RunMode::Dual: return "dual";
    case RunMode::Counting: return "counting";
  }
  return "?";
}

void RunConfig::validate() const {
  effective_scenario().validate();
  if (count() < 1) throw std::invalid_argument("ensemble size must be at least 1");
  if (threads < 0) throw std::invalid_argument("threads must be nonnegative");
  if (stride < 0) throw std::invalid_argument("stride must be nonnegative");
  const bool counting_kind = scenario.kind == Scenario::Kind::Counting;
  if (counting_kind != (mode == RunMode::Counting))
    throw std::invalid_argument(counting_kind
                                    ? "counting scenarios must run in counting mode"
                                    : "only counting scenarios can run in counting mode");
}

Scenario RunConfig::effective_scenario() const {
  Scenario sc = scenario;
  if (seed) sc.spin.seed = *seed;
  if (dt) sc.spin.dt = *dt;
  if (trajectories > 0) sc.spin.ensemble = trajectories;
  return sc;
}

int RunConfig::count() const {
  return trajectories > 0 ? trajectories : scenario.spin.ensemble;
}

const SeriesStat* EnsembleSummary::find(const std::string& name) const {
  for (const auto& s : series)
    if (s.name == name) return &s;
  return nullptr;
}

std::string EnsembleSummary::to_csv() const {
  std::string out = "t";
  for (const auto& s : series) out += "," + s.name + "_mean," + s.name + "_se";
  out += "\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    out += fmt17(t[i]);
    for (const auto& s : series) out += "," + fmt17(s.mean[i]) + "," + fmt17(s.se[i]);
    out += "\n";
  }
  return out;
}

std::string EnsembleSummary::to_json_text() const {
  json j;
  j["mode"] = mode_name(mode);
  j["trajectories"] = trajectories;
  j["dt"] = dt;
  j["horizon"] = horizon;
  j["seed"] = seed;
  j["t"] = t;
  json ser;
  for (const auto& s : series) {
    ser[s.name]["mean"] = s.mean;
    ser[s.name]["se"] = s.se;
  }
  j["series"] = ser;
  j["purity_hist"]["edges"] = purity_edges;
  j["purity_hist"]["mass"] = purity_mass;
  if (!innovation_mean.empty()) {
    j["innovation"]["mean"] = innovation_mean;
    j["innovation"]["var"] = innovation_var;
  }
  if (mode == RunMode::Dual) {
    j["residual"]["mean_max"] = residual_mean_max;
    j["residual"]["max"] = residual_max;
  }
  if (mode == RunMode::Counting) j["mean_jump_count"] = mean_jump_count;
  return j.dump(2) + "\n";
}

EnsembleSummary run_ensemble(const RunConfig& cfg) {
  cfg.validate();
  const Scenario sc = cfg.effective_scenario();
  const int M = cfg.count();
  const auto engine = build_engine(sc);

  Ctx ctx;
  ctx.sc = &sc;
  ctx.eng = &engine;
  ctx.mode = cfg.mode;
  ctx.grid = make_grid(sc.spin.steps(), sc.spin.dt, cfg.stride);
  ctx.seed = sc.spin.seed;
  ctx.opt.project = sc.spin.projection;
  ctx.opt.ball_guard = 1.0 + 5.0 * std::sqrt(sc.spin.dt);
  ctx.s0 = engine.state_from_density(bloch_density(sc.spin.p0));
  ctx.l0 = engine.linear_from_density(bloch_density(sc.spin.p0));
  ctx.channels = engine.n_obs();
  ctx.base_gap = 1.0 - sc.spin.p0.squaredNorm();
  if (cfg.mode == RunMode::Dual) {
    ctx.lambda.resize(static_cast<std::size_t>(ctx.grid.steps) + 1);
    for (int i = 0; i <= ctx.grid.steps; ++i)
      ctx.lambda[static_cast<std::size_t>(i)] = spin::lambda_at(sc.spin, i * sc.spin.dt);
  } else {
    ctx.lambda.assign(static_cast<std::size_t>(ctx.grid.steps) + 1, 0.0);
  }

  const bool want_lines = !cfg.outdir.empty();
  const int nchunks = (M + kChunk - 1) / kChunk;
  std::vector<Accum> parts(static_cast<std::size_t>(nchunks));
  std::atomic<int> next{0};
  std::mutex err_mtx;
  std::exception_ptr err;

  auto work = [&]() {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= nchunks) return;
      auto& acc = parts[static_cast<std::size_t>(c)];
      const int lo = c * kChunk;
      const int hi = std::min(M, lo + kChunk);
      for (int traj = lo; traj < hi; ++traj) {
        try {
          const TrajOut o = run_one(ctx, traj);
          fold(ctx, acc, traj, o, want_lines);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mtx);
          if (!err) err = std::current_exception();
          return;
        }
      }
    }
  };

  int nthreads = cfg.threads > 0
                     ? cfg.threads
                     : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  nthreads = std::min(nthreads, nchunks);
  if (nthreads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (err) std::rethrow_exception(err);

  // ordered reduction over the fixed chunk grid
  const auto names = series_names(cfg.mode);
  const std::size_t ncp = ctx.grid.cp_idx.size();
  std::vector<double> sum(names.size() * ncp, 0.0), sumsq(names.size() * ncp, 0.0);
  std::vector<std::int64_t> hist(20, 0);
  std::vector<double> innov_sum(static_cast<std::size_t>(ctx.channels), 0.0);
  std::vector<double> innov_sq(static_cast<std::size_t>(ctx.channels), 0.0);
  double res_sum_max = 0, res_max = 0, jump_sum = 0;
  std::string lines;
  for (const auto& acc : parts) {
    for (std::size_t i = 0; i < sum.size() && i < acc.sum.size(); ++i) {
      sum[i] += acc.sum[i];
      sumsq[i] += acc.sumsq[i];
    }
    for (std::size_t b = 0; b < hist.size(); ++b) hist[b] += acc.hist[b];
    for (std::size_t i = 0; i < innov_sum.size() && i < acc.innov_sum.size(); ++i) {
      innov_sum[i] += acc.innov_sum[i];
      innov_sq[i] += acc.innov_sq[i];
    }
    res_sum_max += acc.res_sum_max;
    res_max = std::max(res_max, acc.res_max);
    jump_sum += acc.jump_sum;
    if (want_lines) lines += acc.jsonl;
  }

  EnsembleSummary out;
  out.mode = cfg.mode;
  out.trajectories = M;
  out.dt = sc.spin.dt;
  out.horizon = sc.spin.horizon;
  out.seed = sc.spin.seed;
  out.t = ctx.grid.cp_t;
  for (std::size_t si = 0; si < names.size(); ++si) {
    SeriesStat stat;
    stat.name = names[si];
    for (std::size_t c = 0; c < ncp; ++c) {
      const double mean = sum[si * ncp + c] / M;
      const double var =
          M > 1 ? std::max(0.0, (sumsq[si * ncp + c] - M * mean * mean) / (M - 1)) : 0.0;
      stat.mean.push_back(mean);
      stat.se.push_back(std::sqrt(var / M));
    }
    out.series.push_back(std::move(stat));
  }
  for (int b = 0; b <= 20; ++b) out.purity_edges.push_back(b * 0.05);
  for (std::size_t b = 0; b < hist.size(); ++b)
    out.purity_mass.push_back(static_cast<double>(hist[b]) / M);
  if (cfg.mode != RunMode::Linear) {
    for (std::size_t i = 0; i < innov_sum.size(); ++i) {
      const double mean = innov_sum[i] / M;
      out.innovation_mean.push_back(mean);
      out.innovation_var.push_back(
          M > 1 ? std::max(0.0, (innov_sq[i] - M * mean * mean) / (M - 1)) : 0.0);
    }
  }
  out.residual_mean_max = res_sum_max / M;
  out.residual_max = res_max;
  out.mean_jump_count = jump_sum / M;

  if (!cfg.outdir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.outdir);
    write_file((fs::path(cfg.outdir) / "trajectories.jsonl").string(), lines);
    write_file((fs::path(cfg.outdir) / "summary.csv").string(), out.to_csv());
    write_file((fs::path(cfg.outdir) / "summary.json").string(), out.to_json_text());
    write_file((fs::path(cfg.outdir) / "scenario.json").string(), scenario_to_json_text(sc));
    if (cfg.plots) emit_plots(out, sc, cfg.outdir);
  }
  return out;
}

std::vector<SweepRow> run_sweep(RunConfig base, const std::vector<double>& dts) {
  if (dts.empty()) throw std::invalid_argument("dt sweep list is empty");
  for (std::size_t i = 1; i < dts.size(); ++i)
    if (!(dts[i] < dts[i - 1]))
      throw std::invalid_argument("dt sweep must be strictly decreasing");

  const std::string outdir = base.outdir;
  const bool plots = base.plots;
  base.outdir.clear();
  base.plots = false;
  base.mode = RunMode::Dual;

  std::vector<SweepRow> rows;
  for (double dt : dts) {
    RunConfig cfg = base;
    cfg.dt = dt;
    const auto sum = run_ensemble(cfg);
    rows.push_back({dt, sum.residual_mean_max, sum.residual_max});
  }

  if (!outdir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(outdir);
    write_file((fs::path(outdir) / "sweep.csv").string(), sweep_csv(rows));
    if (plots) {
      SvgPlot plot("purity-identity residual vs step", "dt", "mean max |residual|");
      Series s;
      s.label = "residual";
      for (const auto& r : rows) {
        s.x.push_back(r.dt);
        s.y.push_back(r.residual_mean_max);
      }
      plot.add(std::move(s));
      plot.write((fs::path(outdir) / "sweep.svg").string());
    }
  }
  return rows;
}

double fitted_order(const std::vector<SweepRow>& rows) {
  if (rows.size() < 2) throw std::invalid_argument("need at least two sweep points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    const double x = std::log(r.dt);
    const double y = std::log(std::max(r.residual_mean_max, 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "dt,residual_mean_max,residual_max\n";
  for (const auto& r : rows)
    out += fmt17(r.dt) + "," + fmt17(r.residual_mean_max) + "," + fmt17(r.residual_max) + "\n";
  return out;
}

OracleComparison oracle_compare(const Scenario& sc, int bins, double dt, int level) {
  sc.validate();
  if (sc.kind != Scenario::Kind::Spin)
    throw std::invalid_argument("oracle comparison runs on the spin kind");
  if (sc.spin.channels() != 1)
    throw std::invalid_argument("oracle comparison supports a single channel");
  if (!sc.spin.static_coefficients())
    throw std::invalid_argument("oracle comparison needs constant coefficients");
  if (std::abs(sc.spin.p0.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("oracle comparison needs a pure initial state");
  if (bins < 1) throw std::invalid_argument("need at least one bin");

  Scenario local = sc;
  local.spin.dt = dt;
  local.spin.horizon = bins * dt;

  // state vector with the requested polarization
  const double theta = std::acos(std::min(1.0, std::max(-1.0, sc.spin.p0(2))));
  const double phi = std::atan2(sc.spin.p0(1), sc.spin.p0(0));
  Vec psi(2);
  psi << std::cos(theta / 2.0),
      std::polar(std::sin(theta / 2.0), phi);

  fock::NoiseLattice lat(bins, dt, level, 1, 2);
  const auto z = spin::generator_matrix(local.spin);
  const auto coc = fock::unitary_cocycle(lat, z);
  const auto ys = fock::output_increments(lat, coc, 1);
  auto s3 = pauli();
  std::vector<Mat> xs;
  for (const auto& sig : s3) xs.push_back(fock::system_process(lat, coc, sig).back());
  const auto table = fock::conditional_expectation_oracle(ys, xs, lat.vacuum(psi));

  const auto engine = spin::spin_engine(local.spin);
  const auto s0 = engine.state_from_density(bloch_density(sc.spin.p0));
  filter::StepOptions opt;
  opt.ball_guard = 2.0;  // coarse-step transients overshoot the unit sphere

  OracleComparison cmp;
  cmp.bins = bins;
  cmp.dt = dt;
  cmp.level = level;
  for (const auto& row : table.rows) {
    auto s = s0;
    RVec dy(1);
    for (int b = 0; b < bins; ++b) {
      dy(0) = row.outcome[static_cast<std::size_t>(b)];
      s = engine.step_from_record(s, dy, dt, opt);
    }
    OracleComparison::Row out;
    out.outcome = row.outcome;
    out.probability = row.probability;
    out.oracle_p = {row.means[0], row.means[1], row.means[2]};
    out.filter_p = {s.e(1), s.e(2), s.e(3)};
    out.discrepancy = (out.oracle_p - out.filter_p).lpNorm<Eigen::Infinity>();
    cmp.max_discrepancy = std::max(cmp.max_discrepancy, out.discrepancy);
    cmp.rows.push_back(std::move(out));
  }
  return cmp;
}

std::string OracleComparison::table() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s %9s %26s %26s %10s\n", bins * 8 + 2, "outcome",
                "prob", "lattice posterior", "filter posterior", "max|diff|");
  out += buf;
  for (const auto& r : rows) {
    std::string oc;
    for (double v : r.outcome) {
      std::snprintf(buf, sizeof(buf), "%+7.3f ", v);
      oc += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-*s %9.5f (%+6.3f,%+6.3f,%+6.3f)   (%+6.3f,%+6.3f,%+6.3f)   %10.2e\n",
                  bins * 8 + 2, oc.c_str(), r.probability, r.oracle_p(0), r.oracle_p(1),
                  r.oracle_p(2), r.filter_p(0), r.filter_p(1), r.filter_p(2), r.discrepancy);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "max discrepancy over %zu outcomes: %.4e\n", rows.size(),
                max_discrepancy);
  out += buf;
  return out;
}

std::string OracleComparison::to_json_text() const {
  json j;
  j["bins"] = bins;
  j["dt"] = dt;
  j["level"] = level;
  j["max_discrepancy"] = max_discrepancy;
  json rws = json::array();
  for (const auto& r : rows) {
    json rj;
    rj["outcome"] = r.outcome;
    rj["probability"] = r.probability;
    rj["lattice"] = {r.oracle_p(0), r.oracle_p(1), r.oracle_p(2)};
    rj["filter"] = {r.filter_p(0), r.filter_p(1), r.filter_p(2)};
    rj["discrepancy"] = r.discrepancy;
    rws.push_back(rj);
  }
  j["rows"] = rws;
  return j.dump(2) + "\n";
}

}  // namespace qfilt::sim
