#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <vector>

namespace qfilt {

using cxd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

inline Mat dagger(const Mat& a) { return a.adjoint(); }

inline double frob(const Mat& a) { return a.norm(); }

inline bool approx_zero(const Mat& a, double tol) { return a.norm() < tol; }

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/* Pauli matrices, the d = 2 case of the Hermitian basis below. */
inline std::vector<Mat> pauli() {
  Mat s1(2, 2), s2(2, 2), s3(2, 2);
  s1 << 0, 1, 1, 0;
  s2 << 0, cxd(0, -1), cxd(0, 1), 0;
  s3 << 1, 0, 0, -1;
  return {s1, s2, s3};
}

/* Hermitian operator basis: identity first, then the d^2 - 1 traceless
   generators (symmetric, antisymmetric, diagonal), tr(X_a X_b) = 2 delta_ab
   for the traceless part. Spans all Hermitian d x d matrices. */
inline std::vector<Mat> hermitian_basis(int d) {
  if (d < 2) throw std::invalid_argument("hermitian_basis: d must be >= 2");
  std::vector<Mat> b;
  b.push_back(Mat::Identity(d, d));
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      Mat s = Mat::Zero(d, d);
      s(j, k) = 1.0;
      s(k, j) = 1.0;
      b.push_back(s);
      Mat a = Mat::Zero(d, d);
      a(j, k) = cxd(0, -1);
      a(k, j) = cxd(0, 1);
      b.push_back(a);
    }
  for (int l = 1; l < d; ++l) {
    Mat m = Mat::Zero(d, d);
    double f = std::sqrt(2.0 / (l * (l + 1.0)));
    for (int j = 0; j < l; ++j) m(j, j) = f;
    m(l, l) = -l * f;
    b.push_back(m);
  }
  return b;
}

}  // namespace qfilt
