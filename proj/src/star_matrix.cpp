#include "qfilt/star_matrix.hpp"

#include <json.hpp>

#include <Eigen/LU>

namespace qfilt::star {

namespace {
Mat zero_entry(Ring ring, int d) {
  return ring == Ring::Scalar ? Mat::Zero(1, 1) : Mat::Zero(d, d);
}
}  // namespace

StarMatrix::StarMatrix(Shape shape, Ring ring, int m, int d)
    : shape_(shape), ring_(ring), m_(m), d_(ring == Ring::Scalar ? 1 : d) {
  if (m_ < 1) throw std::invalid_argument("StarMatrix: need at least one channel");
  if (ring_ == Ring::Operator && d_ < 1)
    throw std::invalid_argument("StarMatrix: bad operator dimension");
  e_.assign(static_cast<size_t>(side()) * side(), zero_entry(ring_, d_));
}

int StarMatrix::flat(Block b) const {
  switch (b.tag) {
    case Block::Tag::Minus: return 0;
    case Block::Tag::Plus: return m_ + 1;
    case Block::Tag::Channel:
      if (b.k < 1 || b.k > m_)
        throw std::out_of_range("StarMatrix: channel index out of range");
      return b.k;
  }
  throw std::logic_error("StarMatrix: bad block tag");
}

int StarMatrix::sector(int f) const { return f == 0 ? 0 : (f == m_ + 1 ? 2 : 1); }

bool StarMatrix::forced_zero(Block r, Block c) const {
  int i = flat(r), j = flat(c);
  if (shape_ == Shape::Input) return sector(i) == 2 || sector(j) == 0;
  return sector(i) > sector(j);
}

const Mat& StarMatrix::at(Block r, Block c) const {
  return e_[static_cast<size_t>(flat(r)) * side() + flat(c)];
}

cxd StarMatrix::scalar_at(Block r, Block c) const {
  if (ring_ != Ring::Scalar)
    throw std::logic_error("StarMatrix: scalar access on operator ring");
  return at(r, c)(0, 0);
}

void StarMatrix::check_entry_dims(const Mat& v) const {
  if (v.rows() != d_ || v.cols() != d_)
    throw std::invalid_argument("StarMatrix: entry dimension mismatch");
}

void StarMatrix::set(Block r, Block c, const Mat& v) {
  check_entry_dims(v);
  if (forced_zero(r, c) && v.norm() != 0.0)
    throw std::invalid_argument("StarMatrix: assignment to structural zero");
  e_[static_cast<size_t>(flat(r)) * side() + flat(c)] = v;
}

void StarMatrix::set(Block r, Block c, cxd v) {
  Mat mv = Mat::Identity(d_, d_) * v;
  if (ring_ == Ring::Scalar) {
    mv = Mat::Constant(1, 1, v);
  }
  set(r, c, mv);
}

StarMatrix StarMatrix::identity_delta(Ring ring, int m, int d) {
  StarMatrix out(Shape::Generator, ring, m, d);
  Mat one = ring == Ring::Scalar ? Mat::Identity(1, 1) : Mat::Identity(d, d);
  for (int f = 0; f < out.side(); ++f)
    out.e_[static_cast<size_t>(f) * out.side() + f] = one;
  return out;
}

StarMatrix StarMatrix::tensor_delta(const Mat& x, int m) {
  if (x.rows() != x.cols()) throw std::invalid_argument("tensor_delta: square matrix required");
  StarMatrix out(Shape::Generator, Ring::Operator, m, static_cast<int>(x.rows()));
  for (int f = 0; f < out.side(); ++f)
    out.e_[static_cast<size_t>(f) * out.side() + f] = x;
  return out;
}

StarMatrix StarMatrix::scalar_delta(cxd x, int m) {
  StarMatrix out(Shape::Generator, Ring::Scalar, m, 1);
  for (int f = 0; f < out.side(); ++f)
    out.e_[static_cast<size_t>(f) * out.side() + f] = Mat::Constant(1, 1, x);
  return out;
}

StarMatrix StarMatrix::star() const {
  StarMatrix out(shape_, ring_, m_, d_);
  auto g = [this](int f) { return f == 0 ? m_ + 1 : (f == m_ + 1 ? 0 : f); };
  for (int i = 0; i < side(); ++i)
    for (int j = 0; j < side(); ++j)
      out.e_[static_cast<size_t>(i) * side() + j] =
          e_[static_cast<size_t>(g(j)) * side() + g(i)].adjoint();
  return out;
}

StarMatrix StarMatrix::to_input(double tol) const {
  StarMatrix out(Shape::Input, ring_, m_, d_);
  for (int i = 0; i < side(); ++i)
    for (int j = 0; j < side(); ++j) {
      const Mat& v = e_[static_cast<size_t>(i) * side() + j];
      if (out.sector(i) == 2 || out.sector(j) == 0) {
        if (v.norm() > tol)
          throw std::runtime_error("to_input: entry exceeds input-form zero pattern");
        continue;
      }
      out.e_[static_cast<size_t>(i) * side() + j] = v;
    }
  return out;
}

Mat StarMatrix::flatten() const {
  Mat f = Mat::Zero(static_cast<Eigen::Index>(side()) * d_, static_cast<Eigen::Index>(side()) * d_);
  for (int i = 0; i < side(); ++i)
    for (int j = 0; j < side(); ++j)
      f.block(static_cast<Eigen::Index>(i) * d_, static_cast<Eigen::Index>(j) * d_, d_, d_) =
          e_[static_cast<size_t>(i) * side() + j];
  return f;
}

StarMatrix StarMatrix::unflatten(const Mat& f, Shape shape, Ring ring, int m,
                                 int d, double tol) {
  StarMatrix out(shape, ring, m, d);
  d = out.d();
  if (f.rows() != (m + 2) * d || f.cols() != (m + 2) * d)
    throw std::invalid_argument("unflatten: dimension mismatch");
  for (int i = 0; i < out.side(); ++i)
    for (int j = 0; j < out.side(); ++j) {
      Mat v = f.block(static_cast<Eigen::Index>(i) * d, static_cast<Eigen::Index>(j) * d, d, d);
      size_t idx = static_cast<size_t>(i) * out.side() + j;
      if ((shape == Shape::Input && (out.sector(i) == 2 || out.sector(j) == 0)) ||
          (shape == Shape::Generator && out.sector(i) > out.sector(j))) {
        if (v.norm() > tol)
          throw std::runtime_error("unflatten: nonzero entry in structural zero position");
        continue;
      }
      out.e_[idx] = v;
    }
  return out;
}

double StarMatrix::norm() const {
  double s = 0;
  for (const auto& v : e_) s += v.squaredNorm();
  return std::sqrt(s);
}

namespace {
void check_compat(const StarMatrix& a, const StarMatrix& b) {
  if (a.m() != b.m()) throw std::invalid_argument("StarMatrix: channel count mismatch");
  if (a.ring() != b.ring()) throw std::invalid_argument("StarMatrix: ring mismatch");
  if (a.d() != b.d()) throw std::invalid_argument("StarMatrix: entry dimension mismatch");
}
}  // namespace

StarMatrix& StarMatrix::operator+=(const StarMatrix& o) {
  check_compat(*this, o);
  if (shape_ != o.shape_) throw std::invalid_argument("StarMatrix: shape mismatch in sum");
  for (size_t i = 0; i < e_.size(); ++i) e_[i] += o.e_[i];
  return *this;
}

StarMatrix& StarMatrix::operator-=(const StarMatrix& o) {
  check_compat(*this, o);
  if (shape_ != o.shape_) throw std::invalid_argument("StarMatrix: shape mismatch in sum");
  for (size_t i = 0; i < e_.size(); ++i) e_[i] -= o.e_[i];
  return *this;
}

StarMatrix& StarMatrix::operator*=(cxd s) {
  for (auto& v : e_) v *= s;
  return *this;
}

StarMatrix operator+(StarMatrix a, const StarMatrix& b) { return a += b; }
StarMatrix operator-(StarMatrix a, const StarMatrix& b) { return a -= b; }
StarMatrix operator*(cxd s, StarMatrix a) { return a *= s; }

StarMatrix matmul(const StarMatrix& a, const StarMatrix& b) {
  check_compat(a, b);
  Shape shape = (a.shape() == Shape::Input || b.shape() == Shape::Input)
                    ? Shape::Input
                    : Shape::Generator;
  StarMatrix out(shape, a.ring(), a.m(), a.d());
  int n = a.side();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Mat acc = Mat::Zero(a.d(), a.d());
      for (int k = 0; k < n; ++k)
        acc += a.e_[static_cast<size_t>(i) * n + k] * b.e_[static_cast<size_t>(k) * n + j];
      size_t idx = static_cast<size_t>(i) * n + j;
      // products preserve the zero pattern; keep exact zeros exact
      if (acc.norm() != 0.0) out.e_[idx] = acc;
    }
  return out;
}

StarMatrix ito_product(const StarMatrix& a, const StarMatrix& b) {
  if (a.shape() != Shape::Input || b.shape() != Shape::Input)
    throw std::invalid_argument("ito_product: both operands must be input-form");
  return matmul(a, b);
}

StarMatrix commutator(const StarMatrix& a, const StarMatrix& b) {
  return matmul(a, b) - matmul(b, a);
}

double distance(const StarMatrix& a, const StarMatrix& b) {
  return (a.flatten() - b.flatten()).norm();
}

StarMatrix product_differential(const StarMatrix& F, const StarMatrix& G,
                                const Mat& X, const Mat& Y, double tol) {
  if (F.shape() != Shape::Generator || G.shape() != Shape::Generator)
    throw std::invalid_argument("product_differential: generator-form operands required");
  check_compat(F, G);
  auto corner_check = [&](const StarMatrix& A, const Mat& V, const char* which) {
    Mat v = V;
    if (A.ring() == Ring::Scalar && V.rows() != 1) v = Mat::Constant(1, 1, V(0, 0));
    double r1 = (A.at(Block::minus(), Block::minus()) - v).norm();
    double r2 = (A.at(Block::plus(), Block::plus()) - v).norm();
    if (r1 > tol || r2 > tol)
      throw std::runtime_error(std::string("product_differential: corner mismatch in ") + which);
  };
  corner_check(F, X, "first generator");
  corner_check(G, Y, "second generator");

  StarMatrix c = matmul(F.star(), G);
  Mat xy = X.adjoint() * Y;
  StarMatrix d = F.ring() == Ring::Scalar
                     ? StarMatrix::scalar_delta(xy(0, 0), F.m())
                     : StarMatrix::tensor_delta(xy, F.m());
  c -= d;
  return c.to_input(std::max(tol, 1e-12 * (1.0 + c.norm())));
}

StarPredicates classify(const StarMatrix& F, double tol) {
  StarPredicates p;
  StarMatrix fs = F.star();
  StarMatrix fsf = matmul(fs, F);
  StarMatrix ffs = matmul(F, fs);
  StarMatrix delta = F.ring() == Ring::Scalar
                         ? StarMatrix::identity_delta(Ring::Scalar, F.m())
                         : StarMatrix::identity_delta(Ring::Operator, F.m(), F.d());

  p.r_selfadjoint = distance(fs, F);
  p.r_isometric = distance(fsf, delta);
  p.r_counitary = distance(ffs, delta);
  p.r_projector = distance(fsf, F);
  p.r_normal = distance(fsf, ffs);

  Eigen::FullPivLU<Mat> lu(F.flatten());
  lu.setThreshold(1e-12);
  p.invertible = lu.isInvertible();

  p.selfadjoint = p.r_selfadjoint < tol;
  p.isometric = p.r_isometric < tol;
  p.unitary = p.invertible && p.r_isometric < tol && p.r_counitary < tol;
  p.projector = p.r_projector < tol;
  p.normal = p.r_normal < tol;
  return p;
}

namespace {
nlohmann::json entry_to_json(const Mat& v, Ring ring) {
  if (ring == Ring::Scalar) return {v(0, 0).real(), v(0, 0).imag()};
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      row.push_back({v(i, j).real(), v(i, j).imag()});
    rows.push_back(row);
  }
  return rows;
}

Mat entry_from_json(const nlohmann::json& j, Ring ring, int d) {
  if (ring == Ring::Scalar) {
    return Mat::Constant(1, 1, cxd(j.at(0).get<double>(), j.at(1).get<double>()));
  }
  Mat v(d, d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k)
      v(i, k) = cxd(j.at(i).at(k).at(0).get<double>(), j.at(i).at(k).at(1).get<double>());
  return v;
}
}  // namespace

std::string StarMatrix::to_json_string() const {
  nlohmann::json j;
  j["shape"] = shape_ == Shape::Input ? "input" : "generator";
  j["ring"] = ring_ == Ring::Scalar ? "scalar" : "operator";
  j["m"] = m_;
  j["d"] = d_;
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < side(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < side(); ++k)
      row.push_back(entry_to_json(e_[static_cast<size_t>(i) * side() + k], ring_));
    rows.push_back(row);
  }
  j["entries"] = rows;
  return j.dump();
}

StarMatrix StarMatrix::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Shape shape = j.at("shape").get<std::string>() == "input" ? Shape::Input : Shape::Generator;
  Ring ring = j.at("ring").get<std::string>() == "scalar" ? Ring::Scalar : Ring::Operator;
  int m = j.at("m").get<int>();
  int d = j.at("d").get<int>();
  StarMatrix out(shape, ring, m, d);
  const auto& rows = j.at("entries");
  for (int i = 0; i < out.side(); ++i)
    for (int k = 0; k < out.side(); ++k) {
      Mat v = entry_from_json(rows.at(i).at(k), ring, out.d());
      if (v.norm() == 0.0) continue;
      size_t idx = static_cast<size_t>(i) * out.side() + k;
      if ((shape == Shape::Input && (out.sector(i) == 2 || out.sector(k) == 0)) ||
          (shape == Shape::Generator && out.sector(i) > out.sector(k)))
        throw std::runtime_error("from_json: nonzero entry in structural zero position");
      out.e_[idx] = v;
    }
  return out;
}

}  // namespace qfilt::star
