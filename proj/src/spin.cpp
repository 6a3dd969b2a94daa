#include "qfilt/spin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace qfilt::spin {

namespace {

Mat pauli_dot(const Eigen::Vector3d& v) {
  static const std::vector<Mat> sigma = pauli();
  return v(0) * sigma[0] + v(1) * sigma[1] + v(2) * sigma[2];
}

Mat bloch_density(const Eigen::Vector3d& p) {
  return 0.5 * (Mat::Identity(2, 2) + pauli_dot(p));
}

}  // namespace

Schedule3 Schedule3::constant(const Eigen::Vector3d& v) {
  Schedule3 s;
  s.values = {v};
  return s;
}

Schedule3 Schedule3::table(std::vector<double> t, std::vector<Eigen::Vector3d> v) {
  Schedule3 s;
  s.knots = std::move(t);
  s.values = std::move(v);
  s.validate();
  return s;
}

const Eigen::Vector3d& Schedule3::at(double t) const {
  if (knots.empty()) return values.front();
  auto it = std::upper_bound(knots.begin(), knots.end(), t);
  const auto idx = static_cast<std::size_t>(std::distance(knots.begin(), it));
  return values[idx == 0 ? 0 : idx - 1];
}

void Schedule3::validate() const {
  if (values.empty()) throw std::invalid_argument("schedule has no values");
  if (knots.empty()) {
    if (values.size() != 1)
      throw std::invalid_argument("constant schedule must hold exactly one value");
    return;
  }
  if (knots.size() != values.size())
    throw std::invalid_argument("schedule breakpoints and values differ in length");
  if (knots.front() != 0.0)
    throw std::invalid_argument("schedule breakpoints must start at t = 0");
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (knots[i] <= knots[i - 1])
      throw std::invalid_argument("schedule breakpoints must be strictly increasing");
}

bool SpinScenario::static_coefficients() const {
  if (!u.constant_in_time()) return false;
  for (const auto& r : rs)
    if (!r.constant_in_time()) return false;
  return true;
}

int SpinScenario::steps() const {
  return static_cast<int>(std::llround(horizon / dt));
}

void SpinScenario::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (steps() < 1) throw std::invalid_argument("horizon is shorter than one step");
  if (ensemble < 1) throw std::invalid_argument("ensemble size must be at least 1");
  if (p0.norm() > 1.0 + 1e-9)
    throw std::invalid_argument("initial polarization lies outside the unit ball");
  u.validate();
  for (const auto& r : rs) r.validate();
}

filter::SystemModel spin_model(const SpinScenario& sc) {
  filter::SystemModel model;
  model.d = 2;
  if (sc.static_coefficients()) {
    model.h = 0.5 * pauli_dot(sc.u.at(0.0));
    for (const auto& r : sc.rs) model.ls.push_back(0.5 * pauli_dot(r.at(0.0)));
  } else {
    const Schedule3 u = sc.u;
    model.h_t = [u](double t) { return Mat(0.5 * pauli_dot(u.at(t))); };
    for (const auto& r : sc.rs) {
      const Schedule3 rc = r;
      model.ls_t.push_back([rc](double t) { return Mat(0.5 * pauli_dot(rc.at(t))); });
    }
  }
  return model;
}

filter::FilterEngine spin_engine(const SpinScenario& sc) {
  const int m = sc.channels();
  std::vector<filter::ObservationChannel> obs;
  obs.reserve(static_cast<std::size_t>(m));
  for (int i = 1; i <= m; ++i) obs.push_back(filter::ObservationChannel::diffusive(m, i));
  return filter::FilterEngine(spin_model(sc), std::move(obs));
}

star::StarMatrix generator_matrix(const SpinScenario& sc, double t) {
  const int m = sc.channels();
  const Mat eye = Mat::Identity(2, 2);
  const Mat h = 0.5 * pauli_dot(sc.u.at(t));

  star::StarMatrix z(star::Shape::Generator, star::Ring::Operator, m, 2);
  z.set(star::Block::minus(), star::Block::minus(), eye);
  z.set(star::Block::plus(), star::Block::plus(), eye);

  Mat corner = cxd(0, -1) * h;
  for (int k = 1; k <= m; ++k) {
    const Mat l = 0.5 * pauli_dot(sc.rs[static_cast<std::size_t>(k - 1)].at(t));
    z.set(star::Block::channel(k), star::Block::plus(), l);
    z.set(star::Block::minus(), star::Block::channel(k), Mat(-dagger(l)));
    z.set(star::Block::channel(k), star::Block::channel(k), eye);
    corner -= 0.5 * dagger(l) * l;
  }
  z.set(star::Block::minus(), star::Block::plus(), corner);
  return z;
}

TrajectoryRecord simulate_spin(const SpinScenario& sc, rng::Philox& gen) {
  sc.validate();
  const int m = sc.channels();
  const int n = sc.steps();
  const auto eng = spin_engine(sc);

  filter::StepOptions opt;
  opt.project = sc.projection;
  opt.ball_guard = 1.0 + 5.0 * std::sqrt(sc.dt);

  TrajectoryRecord rec;
  rec.t.reserve(static_cast<std::size_t>(n) + 1);
  rec.p.reserve(static_cast<std::size_t>(n) + 1);
  rec.dy.resize(n, m);
  rec.innovation.resize(n, m);

  auto s = eng.state_from_density(bloch_density(sc.p0));
  rec.t.push_back(s.t);
  rec.p.emplace_back(s.e(1), s.e(2), s.e(3));

  RVec xi(m), dy(m);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < m; ++i) xi(i) = gen.normal();
    const RVec comp = eng.compensators(s);
    s = eng.step_diffusive(s, xi, sc.dt, &dy, opt);
    rec.dy.row(k) = dy.transpose();
    rec.innovation.row(k) = (dy - comp * sc.dt).transpose();
    rec.t.push_back(s.t);
    rec.p.emplace_back(s.e(1), s.e(2), s.e(3));
  }
  return rec;
}

TrajectoryRecord simulate_spin(const SpinScenario& sc) {
  rng::Philox gen(sc.seed, 0);
  return simulate_spin(sc, gen);
}

LinearTrack simulate_spin_linear(const SpinScenario& sc, const Eigen::MatrixXd& dy) {
  sc.validate();
  const int m = sc.channels();
  const int n = sc.steps();
  if (dy.rows() != n || dy.cols() != m)
    throw std::invalid_argument("observation record shape does not match the scenario grid");
  const auto eng = spin_engine(sc);

  LinearTrack track;
  track.t.reserve(static_cast<std::size_t>(n) + 1);
  track.rho.reserve(static_cast<std::size_t>(n) + 1);
  track.f.reserve(static_cast<std::size_t>(n) + 1);

  auto ls = eng.linear_from_density(bloch_density(sc.p0));
  track.t.push_back(ls.t);
  track.rho.push_back(ls.g(0));
  track.f.emplace_back(ls.g(1), ls.g(2), ls.g(3));

  for (int k = 0; k < n; ++k) {
    ls = eng.linear_step(ls, dy.row(k).transpose(), sc.dt);
    if (!(ls.g(0) > 0.0))
      throw std::domain_error("linear weight lost positivity at t = " + std::to_string(ls.t));
    track.t.push_back(ls.t);
    track.rho.push_back(ls.g(0));
    track.f.emplace_back(ls.g(1), ls.g(2), ls.g(3));
  }
  return track;
}

double lambda_at(const SpinScenario& sc, double t) {
  if (t <= 0.0) return 0.0;
  double acc = 0.0;
  for (const auto& r : sc.rs) {
    if (r.constant_in_time()) {
      acc += r.values.front().squaredNorm() * t;
      continue;
    }
    const std::size_t nseg = r.knots.size();
    for (std::size_t j = 0; j < nseg; ++j) {
      const double a = r.knots[j];
      const double b = j + 1 < nseg ? r.knots[j + 1] : std::numeric_limits<double>::infinity();
      const double len = std::min(b, t) - a;
      if (len <= 0.0) break;
      acc += r.values[j].squaredNorm() * len;
    }
  }
  return acc;
}

CollapseMonitor collapse_check(const TrajectoryRecord& traj, const LinearTrack& lin,
                               const SpinScenario& sc) {
  if (traj.t.size() != lin.t.size())
    throw std::invalid_argument("nonlinear and linear tracks use different grids");

  CollapseMonitor mon;
  const std::size_t n = lin.t.size();
  mon.t = lin.t;
  mon.lambda.resize(n);
  mon.residual.resize(n);

  const double base = 1.0 - sc.p0.squaredNorm();
  for (std::size_t k = 0; k < n; ++k) {
    mon.lambda[k] = lambda_at(sc, lin.t[k]);
    const double gap = lin.rho[k] * lin.rho[k] - lin.f[k].squaredNorm();
    mon.residual[k] = gap - std::exp(-mon.lambda[k]) * base;
    mon.max_abs_residual = std::max(mon.max_abs_residual, std::abs(mon.residual[k]));
    if (k > 0 && mon.lambda[k] < mon.lambda[k - 1]) mon.lambda_nondecreasing = false;
  }

  mon.terminal_impurity = 1.0 - traj.p.back().squaredNorm();
  const double rho_T = lin.rho.back();
  mon.terminal_forecast = std::exp(-mon.lambda.back()) * base / (rho_T * rho_T);
  return mon;
}

}  // namespace qfilt::spin
