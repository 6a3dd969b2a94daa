#pragma once

#include <cstdint>
#include <vector>

#include "qfilt/filtering.hpp"
#include "qfilt/linalg.hpp"
#include "qfilt/rng.hpp"
#include "qfilt/star_matrix.hpp"

namespace qfilt::spin {

/* Piecewise-constant vector coefficient: value(t) is the entry of the last
 * breakpoint not exceeding t.  An empty knot list means a constant. */
struct Schedule3 {
  std::vector<double> knots;
  std::vector<Eigen::Vector3d> values;

  static Schedule3 constant(const Eigen::Vector3d& v);
  static Schedule3 table(std::vector<double> t, std::vector<Eigen::Vector3d> v);

  const Eigen::Vector3d& at(double t) const;
  bool constant_in_time() const { return knots.empty(); }
  void validate() const;
};

/* Continuously observed spin-1/2 in a magnetic field u with measurement
 * directions r_i.  Every channel is read out by homodyne quadrature. */
struct SpinScenario {
  Schedule3 u = Schedule3::constant(Eigen::Vector3d::Zero());
  std::vector<Schedule3> rs;
  Eigen::Vector3d p0 = Eigen::Vector3d::Zero();
  double horizon = 1.0;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  int ensemble = 1;
  bool projection = false;

  int channels() const { return static_cast<int>(rs.size()); }
  bool static_coefficients() const;
  int steps() const;
  void validate() const;
};

/* H(t) = u(t).sigma / 2, L_i(t) = r_i(t).sigma / 2. */
filter::SystemModel spin_model(const SpinScenario& sc);

/* Engine with one quadrature observation per coupling channel. */
filter::FilterEngine spin_engine(const SpinScenario& sc);

/* Star-unitary evolution generator of the scenario at time t: corner blocks
 * are the identity, the creation column carries L_i, the annihilation row
 * carries -adjoint(L_i), and the (-,+) entry is -iH - sum L_i^dag L_i / 2. */
star::StarMatrix generator_matrix(const SpinScenario& sc, double t = 0.0);

struct TrajectoryRecord {
  std::vector<double> t;                 // grid, steps()+1 points
  std::vector<Eigen::Vector3d> p;        // polarization along the grid
  Eigen::MatrixXd dy;                    // steps x channels observation increments
  Eigen::MatrixXd innovation;            // dy minus the compensator drift
};

TrajectoryRecord simulate_spin(const SpinScenario& sc, rng::Philox& gen);
TrajectoryRecord simulate_spin(const SpinScenario& sc);

struct LinearTrack {
  std::vector<double> t;
  std::vector<double> rho;               // scalar weight, rho(0) = 1
  std::vector<Eigen::Vector3d> f;        // unnormalized polarization, f(0) = p0
};

/* Integrates the unnormalized companion equations on a recorded observation
 * stream (steps x channels).  Throws std::domain_error if rho loses
 * positivity. */
LinearTrack simulate_spin_linear(const SpinScenario& sc, const Eigen::MatrixXd& dy);

/* Accumulated collapse exponent: integral of sum_i |r_i(s)|^2 up to t,
 * evaluated in closed form on the breakpoint grid. */
double lambda_at(const SpinScenario& sc, double t);

struct CollapseMonitor {
  std::vector<double> t;
  std::vector<double> lambda;
  std::vector<double> residual;     // rho^2 - |f|^2 - e^{-lambda} (1 - |p0|^2)
  double max_abs_residual = 0.0;
  double terminal_impurity = 0.0;   // 1 - |p(T)|^2 from the normalized path
  double terminal_forecast = 0.0;   // e^{-lambda(T)} (1 - |p0|^2) / rho(T)^2
  bool lambda_nondecreasing = true;
};

/* Pathwise purity-decay audit.  The nonlinear trajectory and the linear
 * track must come from the same observation record. */
CollapseMonitor collapse_check(const TrajectoryRecord& traj,
                               const LinearTrack& lin,
                               const SpinScenario& sc);

}  // namespace qfilt::spin
