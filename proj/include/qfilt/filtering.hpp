#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "qfilt/linalg.hpp"
#include "qfilt/star_matrix.hpp"

namespace qfilt::filter {

/* Finite-dimensional system coupled to vacuum noise channels.  Optional
 * time dependence is sampled at the left endpoint of each step. */
struct SystemModel {
  int d = 2;
  Mat h;
  std::vector<Mat> ls;
  std::function<Mat(double)> h_t;
  std::vector<std::function<Mat(double)>> ls_t;

  int channels() const { return int(ls.size()); }
  bool time_dependent() const { return bool(h_t) || !ls_t.empty(); }
  Mat hamiltonian(double t) const;
  Mat coupling(std::size_t i, double t) const;
};

/* One observed process, a scalar input-form combination of the fundamental
 * increments.  Must be self-adjoint under the star involution, and distinct
 * observations must commute as processes. */
struct ObservationChannel {
  enum class Kind { Diffusive, Counting, General };
  Kind kind = Kind::General;
  star::StarMatrix coeff;

  static ObservationChannel diffusive(int m, int channel);
  static ObservationChannel counting(int m, int channel);
  static ObservationChannel general(star::StarMatrix c);
  bool gauge_free() const;  // no number-increment component
};

/* Conditional state as real coordinates e_j = tr(rho X_j) in the Hermitian
 * basis (identity first); e_0 is the trace. */
struct FilterState {
  double t = 0;
  RVec e;
};

struct GainReport {
  int rank = 0;
  double floor = 0;
  double residual = 0;  // ||corr * gain - rhs|| after the pseudo-inverse
};

struct StepOptions {
  bool project = false;       // clip the state back onto positive matrices
  double ball_guard = 1.1;    // abort when ||traceless part|| exceeds guard * radius
};

/* Markovian conditional-expectation recursion.  Drift is linear in the
 * coordinates; the gains solve the correlation system per step. */
class FilterEngine {
 public:
  FilterEngine(SystemModel model, std::vector<ObservationChannel> obs);
  FilterEngine(SystemModel model, std::vector<ObservationChannel> obs,
               std::vector<Mat> basis);

  const SystemModel& model() const { return model_; }
  const std::vector<Mat>& basis() const { return basis_; }
  int coords() const { return int(basis_.size()); }
  int n_obs() const { return int(obs_.size()); }
  const ObservationChannel& observation(int i) const { return obs_[i]; }

  FilterState state_from_density(const Mat& rho, double t = 0) const;
  Mat density(const FilterState& s) const;
  double expectation(const FilterState& s, const Mat& x) const;

  Eigen::MatrixXd drift_matrix(double t) const;
  RVec drift(const FilterState& s) const;
  RVec compensators(const FilterState& s) const;
  Eigen::MatrixXd correlation(const FilterState& s) const;
  std::vector<RVec> gains(const FilterState& s, GainReport* rep = nullptr) const;

  /* advance on recorded observation increments */
  FilterState step_from_record(const FilterState& s, const RVec& dy, double dt,
                               const StepOptions& opt = {}) const;
  /* gauge-free channels driven by standard normals */
  FilterState step_diffusive(const FilterState& s, const RVec& xi, double dt,
                             RVec* dy_out = nullptr, const StepOptions& opt = {}) const;
  /* counting channels driven by uniforms; a jump replaces the Euler update
   * by the exact reset */
  FilterState step_counting(const FilterState& s, const RVec& u, double dt,
                            RVec* dn_out = nullptr, const StepOptions& opt = {}) const;

  /* unnormalized linear propagation on the same record, gauge-free only */
  struct LinearState {
    double t = 0;
    RVec g;
  };
  LinearState linear_from_density(const Mat& rho, double t = 0) const;
  LinearState linear_step(const LinearState& s, const RVec& dy, double dt) const;
  double weight(const LinearState& s) const { return s.g(0); }
  FilterState normalize(const LinearState& s) const;

  FilterState project(const FilterState& s) const;
  double ball_radius() const;  // largest physical ||traceless part||

 private:
  struct Tensors {
    double t = 0;
    Eigen::MatrixXd a;                     // drift matrix
    std::vector<Eigen::MatrixXd> r;        // gain tensors, one per observation
    std::vector<std::vector<RVec>> s;      // correlation coordinate vectors
  };
  Tensors build(double t) const;
  void validate() const;

  SystemModel model_;
  std::vector<ObservationChannel> obs_;
  std::vector<Mat> basis_;
  Eigen::MatrixXd gram_, gram_inv_;
  Tensors static_tensors_;  // time-dependent models rebuild per step instead
  mutable std::atomic<bool> coarse_warned_{false};
};

/* Conditioning on a measurement of the commuting family y0 at time zero:
 * one branch per joint eigenspace with its Born probability. */
struct InitialBranch {
  std::vector<double> outcome;
  double probability = 0;
  RVec e;
};

std::vector<InitialBranch> initial_condition(const FilterEngine& eng,
                                             const std::vector<Mat>& y0,
                                             const Vec& psi);

/* Best affine estimate of x from the family ys in the state rho, using
 * symmetrized second moments; exposed for comparison with the spectral
 * branches. */
struct AffineEstimate {
  double alpha = 0;
  RVec beta;
};

AffineEstimate initial_gain(const Mat& rho, const std::vector<Mat>& ys, const Mat& x);

/* Heisenberg generator i[h, x] + sum(l+ x l - (l+ l x + x l+ l) / 2). */
Mat lindblad(const Mat& h, const std::vector<Mat>& ls, const Mat& x);

}  // namespace qfilt::filter
