#pragma once

#include <string>
#include <vector>

#include "qfilt/linalg.hpp"

namespace qfilt::star {

/* Block matrices indexed by {minus, channel 1..m, plus} with the sector
 * order minus < channel < plus.  Two zero patterns occur:
 *
 *   Input:     zero minus-column and zero plus-row.  These are the
 *              coefficient matrices of Ito differentials.
 *   Generator: zero below the sector diagonal.  These carry process values
 *              in the two corner entries.
 *
 * Entries are either complex scalars or d x d complex matrices (one ring
 * per matrix, fixed at construction).
 */

enum class Shape { Input, Generator };
enum class Ring { Scalar, Operator };

struct Block {
  enum class Tag { Minus, Channel, Plus };
  Tag tag = Tag::Minus;
  int k = 0;  // 1-based channel index when tag == Channel

  static Block minus() { return {Tag::Minus, 0}; }
  static Block channel(int k) { return {Tag::Channel, k}; }
  static Block plus() { return {Tag::Plus, 0}; }
};

class StarMatrix {
 public:
  StarMatrix(Shape shape, Ring ring, int m, int d = 1);

  static StarMatrix identity_delta(Ring ring, int m, int d = 1);
  static StarMatrix tensor_delta(const Mat& x, int m);
  static StarMatrix scalar_delta(cxd x, int m);

  Shape shape() const { return shape_; }
  Ring ring() const { return ring_; }
  int m() const { return m_; }
  int d() const { return d_; }
  int side() const { return m_ + 2; }

  const Mat& at(Block r, Block c) const;
  cxd scalar_at(Block r, Block c) const;
  void set(Block r, Block c, const Mat& v);
  void set(Block r, Block c, cxd v);
  bool forced_zero(Block r, Block c) const;

  /* The involution g c^dagger g with g the antidiagonal sector identity:
   * entry (mu, nu) of the result is the adjoint of entry (g nu, g mu). */
  StarMatrix star() const;

  /* Reinterpret a generator-form matrix with negligible corners as
   * input-form; throws if a corner exceeds tol. */
  StarMatrix to_input(double tol = 1e-9) const;

  Mat flatten() const;
  static StarMatrix unflatten(const Mat& f, Shape shape, Ring ring, int m,
                              int d, double tol = 1e-9);

  double norm() const;

  StarMatrix& operator+=(const StarMatrix& o);
  StarMatrix& operator-=(const StarMatrix& o);
  StarMatrix& operator*=(cxd s);

  std::string to_json_string() const;
  static StarMatrix from_json_string(const std::string& text);

 private:
  int flat(Block b) const;
  int sector(int flat_idx) const;  // 0 minus, 1 channel, 2 plus
  void check_entry_dims(const Mat& v) const;

  Shape shape_;
  Ring ring_;
  int m_, d_;
  std::vector<Mat> e_;  // (m+2)^2 entries, row-major

  friend StarMatrix matmul(const StarMatrix&, const StarMatrix&);
};

StarMatrix operator+(StarMatrix a, const StarMatrix& b);
StarMatrix operator-(StarMatrix a, const StarMatrix& b);
StarMatrix operator*(cxd s, StarMatrix a);

/* Full block product.  Input x anything = Input; Generator x Generator =
 * Generator.  Rings and channel counts must agree. */
StarMatrix matmul(const StarMatrix& a, const StarMatrix& b);

/* Ito table product of two differential coefficient matrices.  Both
 * operands must be input-form; the structural zeros make the product
 * reduce to channel contraction, which reproduces the table
 *   dA- dA+ = dt, dA- dN = dA-, dN dA+ = dA+, dN dN = dN,
 * with dt annihilating everything. */
StarMatrix ito_product(const StarMatrix& a, const StarMatrix& b);

StarMatrix commutator(const StarMatrix& a, const StarMatrix& b);

double distance(const StarMatrix& a, const StarMatrix& b);

/* Differential coefficient matrix of the product of two processes with
 * generator matrices F, G and current values X, Y: star(F) G - (X* Y) delta,
 * returned in input form.  The corners of F must both equal X (same for
 * G, Y); a mismatch signals an ill-formed generator. */
StarMatrix product_differential(const StarMatrix& F, const StarMatrix& G,
                                const Mat& X, const Mat& Y,
                                double tol = 1e-9);

struct StarPredicates {
  bool selfadjoint = false;
  bool isometric = false;
  bool unitary = false;
  bool projector = false;
  bool normal = false;
  bool invertible = false;
  double r_selfadjoint = 0;
  double r_isometric = 0;
  double r_counitary = 0;  // residual of F star(F) = delta
  double r_projector = 0;
  double r_normal = 0;
};

/* Algebraic classification of a generator matrix, all tests against the
 * Frobenius tolerance. */
StarPredicates classify(const StarMatrix& F, double tol = 1e-10);

}  // namespace qfilt::star
