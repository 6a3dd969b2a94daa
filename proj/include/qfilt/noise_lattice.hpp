#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qfilt/linalg.hpp"
#include "qfilt/star_matrix.hpp"

namespace qfilt::fock {

/* Discretized noise model: a register of time bins, each bin holding one
 * truncated oscillator (q + 1 levels) per channel, tensored with a finite
 * system factor.  Factor order: system first, then bin 0 channel 1, bin 0
 * channel 2, ..., last bin last channel. */
class NoiseLattice {
 public:
  NoiseLattice(int bins, double dt, int q, int channels, int d_sys);

  int bins() const { return bins_; }
  double dt() const { return dt_; }
  int q() const { return q_; }
  int channels() const { return channels_; }
  int d_sys() const { return d_sys_; }
  int level_dim() const { return q_ + 1; }
  int factor_count() const { return 1 + bins_ * channels_; }
  std::int64_t dim() const { return dim_; }

  /* factor index of a bin/channel slot; channel is 1-based */
  int factor(int bin, int channel) const;
  int factor_dim(int f) const { return f == 0 ? d_sys_ : level_dim(); }

  Vec vacuum(const Vec& psi) const;

  /* caps; amplitude cap applies at construction, operator cap to any dense
   * operator builder.  Overridable through QFILT_DIM_CAP / QFILT_OP_DIM_CAP. */
  static std::int64_t amplitude_cap();
  static std::int64_t operator_cap();
  void require_operator_budget() const;

 private:
  int bins_, q_, channels_, d_sys_;
  double dt_;
  std::int64_t dim_;
};

struct LatticeOp {
  Mat mat;
  int horizon = -1;  // acts as identity on bins > horizon; -1 = system only
};

enum class IncKind { Annihilation, Creation, Number, Time };

/* Dense embedding of a local operator living on the listed factors. */
Mat embed_local(const NoiseLattice& lat, const Mat& local, const std::vector<int>& factors);

LatticeOp embed_system(const NoiseLattice& lat, const Mat& sys);

/* One-bin integrator increments: annihilation and creation carry sqrt(dt),
 * the gauge increment is a_i^dag a_k, the time increment dt * identity. */
LatticeOp basic_increment(const NoiseLattice& lat, IncKind kind, int bin,
                          int ch_i = 1, int ch_k = 1);

/* Single coefficient term of an Ito sum at one bin; the coefficient must be
 * adapted, i.e. its horizon must lie strictly before the bin. */
LatticeOp ito_term(const NoiseLattice& lat, int bin, star::Block row,
                   star::Block col, const LatticeOp& coeff);

/* Ito sum over all bins of per-bin coefficient matrices with system-operator
 * (or scalar) entries.  Such coefficients are trivially adapted. */
LatticeOp ito_sum_integral(const NoiseLattice& lat,
                           const std::vector<star::StarMatrix>& coeff_per_bin);
LatticeOp ito_sum_integral(const NoiseLattice& lat, const star::StarMatrix& coeff);

/* Sampled check of a declared adaptedness horizon: returns the largest
 * matrix element magnitude inconsistent with identity action beyond the
 * horizon. */
double horizon_violation(const NoiseLattice& lat, const LatticeOp& op,
                         int samples, unsigned seed);

enum class Propagation { Exact, Euler };

struct Cocycle {
  std::vector<Mat> U;  // U[i] after i bins; U[0] = identity
  Propagation scheme = Propagation::Exact;
};

/* Discrete unitary evolution driven by a star-unitary generator matrix.
 * The exact scheme exponentiates the skew part of the generator logarithm
 * contracted with the bin increments, which keeps every step unitary to
 * machine precision; the Euler scheme chains the first-order updates. */
Cocycle unitary_cocycle(const NoiseLattice& lat, const star::StarMatrix& z,
                        Propagation scheme = Propagation::Exact);
Cocycle unitary_cocycle(const NoiseLattice& lat,
                        const std::vector<star::StarMatrix>& z_per_bin,
                        Propagation scheme = Propagation::Exact);

/* Input-picture quadrature 2 Re a of one bin, eigenvalues O(sqrt(dt)). */
Mat quadrature_increment(const NoiseLattice& lat, int channel, int bin);

/* Output observables Y(t_i) = U_n^dag W(t_i) U_n and the Heisenberg system
 * process X(t_i) = U_i^dag (x ⊗ I) U_i at the bin boundaries. */
std::vector<Mat> output_process(const NoiseLattice& lat, const Cocycle& c, int channel);
std::vector<Mat> output_increments(const NoiseLattice& lat, const Cocycle& c, int channel);
std::vector<Mat> system_process(const NoiseLattice& lat, const Cocycle& c, const Mat& x);

struct NondemReport {
  Eigen::MatrixXd residual;  // ||[Y_i, X_j]||_F over boundary pairs
  double max_forward = 0;    // over i <= j
  double max_backward = 0;   // over i > j
  int backward_i = -1, backward_j = -1;
  double max_self = 0;       // mutual commutation of the Y family
};

NondemReport nondemolition_residuals(const std::vector<Mat>& ys,
                                     const std::vector<Mat>& xs);

struct OracleRow {
  std::vector<double> outcome;  // one eigenvalue per observed family member
  double probability = 0;
  std::vector<double> means;    // posterior means, one per queried observable
};

struct OracleTable {
  std::vector<OracleRow> rows;
};

/* Spectral conditional expectation: jointly diagonalizes the commuting
 * family y_family, projects xi on each joint eigenspace and evaluates the
 * queried observables in the normalized projections.  Outcomes of
 * negligible probability are dropped. */
OracleTable conditional_expectation_oracle(const std::vector<Mat>& y_family,
                                           const std::vector<Mat>& x_family,
                                           const Vec& xi,
                                           double cluster_tol = 1e-9,
                                           double drop_tol = 1e-12);

std::string oracle_table_json(const OracleTable& table);

}  // namespace qfilt::fock
