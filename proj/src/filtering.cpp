#include "qfilt/filtering.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "qfilt/noise_lattice.hpp"

namespace qfilt::filter {

using star::Block;
using star::Ring;
using star::Shape;
using star::StarMatrix;

Mat SystemModel::hamiltonian(double t) const { return h_t ? h_t(t) : h; }

Mat SystemModel::coupling(std::size_t i, double t) const {
  if (i < ls_t.size() && ls_t[i]) return ls_t[i](t);
  return ls[i];
}

Mat lindblad(const Mat& h, const std::vector<Mat>& ls, const Mat& x) {
  Mat out = cxd(0, 1) * (h * x - x * h);
  for (const Mat& l : ls) {
    const Mat ll = l.adjoint() * l;
    out += l.adjoint() * x * l - 0.5 * (ll * x + x * ll);
  }
  return out;
}

ObservationChannel ObservationChannel::diffusive(int m, int channel) {
  StarMatrix c(Shape::Input, Ring::Scalar, m);
  c.set(Block::minus(), Block::channel(channel), cxd(1, 0));
  c.set(Block::channel(channel), Block::plus(), cxd(1, 0));
  return {Kind::Diffusive, std::move(c)};
}

ObservationChannel ObservationChannel::counting(int m, int channel) {
  StarMatrix c(Shape::Input, Ring::Scalar, m);
  c.set(Block::channel(channel), Block::channel(channel), cxd(1, 0));
  return {Kind::Counting, std::move(c)};
}

ObservationChannel ObservationChannel::general(StarMatrix c) {
  if (distance(c.star(), c) > 1e-12 * (1.0 + c.norm()))
    throw std::invalid_argument("observation process is not self-adjoint");
  return {Kind::General, std::move(c)};
}

bool ObservationChannel::gauge_free() const {
  for (int a = 1; a <= coeff.m(); ++a)
    for (int b = 1; b <= coeff.m(); ++b)
      if (coeff.scalar_at(Block::channel(a), Block::channel(b)) != cxd(0, 0))
        return false;
  return true;
}

namespace {

/* increment-slot application: the observation coefficients act on a system
 * operator with the couplings inserted in normal order */
Mat slot_apply(const StarMatrix& dcoef, const std::vector<Mat>& ls, const Mat& x) {
  const int m = dcoef.m();
  Mat out = dcoef.scalar_at(Block::minus(), Block::plus()) * x;
  for (int a = 1; a <= m; ++a) {
    const cxd ann = dcoef.scalar_at(Block::minus(), Block::channel(a));
    if (ann != cxd(0, 0)) out += ann * (x * ls[a - 1]);
    const cxd cre = dcoef.scalar_at(Block::channel(a), Block::plus());
    if (cre != cxd(0, 0)) out += cre * (ls[a - 1].adjoint() * x);
    for (int b = 1; b <= m; ++b) {
      const cxd g = dcoef.scalar_at(Block::channel(a), Block::channel(b));
      if (g != cxd(0, 0)) out += g * (ls[a - 1].adjoint() * x * ls[b - 1]);
    }
  }
  return out;
}

/* channel component of the output martingale coefficient */
Mat output_op(const StarMatrix& dcoef, const std::vector<Mat>& ls, int a, int d) {
  Mat out = dcoef.scalar_at(Block::channel(a), Block::plus()) * Mat::Identity(d, d);
  for (int b = 1; b <= dcoef.m(); ++b) {
    const cxd g = dcoef.scalar_at(Block::channel(a), Block::channel(b));
    if (g != cxd(0, 0)) out += g * ls[b - 1];
  }
  return out;
}

struct PinvResult {
  int rank = 0;
  double floor = 0;
};

/* symmetric eigenvalue pseudo-inverse solve with a relative floor; columns
 * of b are solved independently, minimum-norm in the dropped directions */
Eigen::MatrixXd pinv_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           PinvResult* info = nullptr) {
  if (a.rows() == 0) return Eigen::MatrixXd::Zero(0, b.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd ev = es.eigenvalues();
  const Eigen::MatrixXd& v = es.eigenvectors();
  const double floor = 1e-12 * std::max(a.trace(), 0.0);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows(), b.cols());
  int rank = 0;
  for (Eigen::Index j = 0; j < ev.size(); ++j) {
    if (ev(j) <= floor) continue;
    ++rank;
    out.noalias() += v.col(j) * (v.col(j).transpose() * b) / ev(j);
  }
  if (info) {
    info->rank = rank;
    info->floor = floor;
  }
  return out;
}

}  // namespace

FilterEngine::FilterEngine(SystemModel model, std::vector<ObservationChannel> obs)
    : FilterEngine(std::move(model), std::move(obs), hermitian_basis(model.d)) {}

FilterEngine::FilterEngine(SystemModel model, std::vector<ObservationChannel> obs,
                           std::vector<Mat> basis)
    : model_(std::move(model)), obs_(std::move(obs)), basis_(std::move(basis)) {
  if (model_.h.size() == 0) model_.h = Mat::Zero(model_.d, model_.d);
  validate();
  const int n = coords();
  gram_.resize(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      gram_(j, k) = std::real((basis_[j].adjoint() * basis_[k]).trace());
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram_);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible())
    throw std::invalid_argument("filter basis is degenerate");
  gram_inv_ = lu.inverse();
  if (!model_.time_dependent()) static_tensors_ = build(0.0);
}

void FilterEngine::validate() const {
  const int d = model_.d;
  if (d < 2) throw std::invalid_argument("filter system dimension must be >= 2");
  if (model_.h.size() != 0 && (model_.h.rows() != d || model_.h.cols() != d))
    throw std::invalid_argument("Hamiltonian has wrong dimension");
  for (const Mat& l : model_.ls)
    if (l.rows() != d || l.cols() != d)
      throw std::invalid_argument("coupling operator has wrong dimension");
  if (!model_.ls_t.empty() && model_.ls_t.size() != model_.ls.size())
    throw std::invalid_argument("time-dependent couplings must match coupling count");

  const int m = model_.channels();
  for (const auto& o : obs_) {
    if (o.coeff.shape() != Shape::Input || o.coeff.ring() != Ring::Scalar)
      throw std::invalid_argument("observation coefficients must be scalar input form");
    if (o.coeff.m() != m)
      throw std::invalid_argument("observation channel count mismatch");
    if (distance(o.coeff.star(), o.coeff) > 1e-12 * (1.0 + o.coeff.norm()))
      throw std::invalid_argument("observation process is not self-adjoint");
  }
  for (std::size_t i = 0; i < obs_.size(); ++i)
    for (std::size_t k = i + 1; k < obs_.size(); ++k) {
      const double r = distance(ito_product(obs_[i].coeff, obs_[k].coeff),
                                ito_product(obs_[k].coeff, obs_[i].coeff));
      if (r > 1e-12) {
        std::ostringstream os;
        os << "observations " << i << " and " << k
           << " do not commute as processes (residual " << r << ")";
        throw std::invalid_argument(os.str());
      }
    }

  if (basis_.empty()) throw std::invalid_argument("filter basis is empty");
  for (const Mat& x : basis_) {
    if (x.rows() != d || x.cols() != d)
      throw std::invalid_argument("basis operator has wrong dimension");
    if ((x - x.adjoint()).norm() > 1e-12 * (1.0 + x.norm()))
      throw std::invalid_argument("basis operator is not Hermitian");
  }
  if ((basis_[0] - Mat::Identity(d, d)).norm() > 1e-12)
    throw std::invalid_argument("filter basis must start with the identity");
}

FilterEngine::Tensors FilterEngine::build(double t) const {
  const int n = coords();
  const int d = model_.d;
  const Mat h = model_.h.size() == 0 ? Mat(Mat::Zero(d, d)) : model_.hamiltonian(t);
  std::vector<Mat> ls(model_.ls.size());
  for (std::size_t i = 0; i < ls.size(); ++i) ls[i] = model_.coupling(i, t);

  auto trace_coords = [&](const Mat& mm) {
    RVec c(n);
    for (int l = 0; l < n; ++l) c(l) = std::real((basis_[l].adjoint() * mm).trace());
    return c;
  };
  auto check_closure = [&](const Mat& mm, const char* what) {
    RVec c = trace_coords(mm);
    RVec w = gram_inv_ * c;
    Mat recon = Mat::Zero(d, d);
    for (int l = 0; l < n; ++l) recon += w(l) * basis_[l];
    if ((mm - recon).norm() > 1e-9 * (1.0 + mm.norm())) {
      std::ostringstream os;
      os << "operator basis does not close: " << what
         << " image leaves the span (residual " << (mm - recon).norm() << ")";
      throw std::invalid_argument(os.str());
    }
    return c;
  };

  Tensors tn;
  tn.t = t;
  Eigen::MatrixXd bmat(n, n);
  for (int j = 0; j < n; ++j)
    bmat.row(j) = check_closure(lindblad(h, ls, basis_[j]), "drift").transpose();
  tn.a = bmat * gram_inv_;

  const int mo = n_obs();
  tn.r.resize(mo);
  for (int i = 0; i < mo; ++i) {
    tn.r[i].resize(n, n);
    for (int j = 0; j < n; ++j)
      tn.r[i].row(j) =
          check_closure(slot_apply(obs_[i].coeff, ls, basis_[j]), "observation")
              .transpose();
  }

  tn.s.assign(mo, std::vector<RVec>(mo));
  const int m = model_.channels();
  for (int i = 0; i < mo; ++i)
    for (int k = i; k < mo; ++k) {
      Mat v = Mat::Zero(d, d);
      for (int a = 1; a <= m; ++a)
        v += output_op(obs_[i].coeff, ls, a, d).adjoint() *
             output_op(obs_[k].coeff, ls, a, d);
      v = 0.5 * (v + v.adjoint());
      RVec c = trace_coords(v);
      tn.s[i][k] = c;
      tn.s[k][i] = c;
    }
  return tn;
}

FilterState FilterEngine::state_from_density(const Mat& rho, double t) const {
  if (rho.rows() != model_.d || rho.cols() != model_.d)
    throw std::invalid_argument("density matrix has wrong dimension");
  if ((rho - rho.adjoint()).norm() > 1e-10 * (1.0 + rho.norm()))
    throw std::invalid_argument("density matrix is not Hermitian");
  FilterState s;
  s.t = t;
  s.e.resize(coords());
  for (int l = 0; l < coords(); ++l)
    s.e(l) = std::real((basis_[l].adjoint() * rho).trace());
  return s;
}

Mat FilterEngine::density(const FilterState& s) const {
  const RVec w = gram_inv_ * s.e;
  Mat rho = Mat::Zero(model_.d, model_.d);
  for (int l = 0; l < coords(); ++l) rho += w(l) * basis_[l];
  return rho;
}

double FilterEngine::expectation(const FilterState& s, const Mat& x) const {
  return std::real((density(s) * x).trace());
}

Eigen::MatrixXd FilterEngine::drift_matrix(double t) const {
  if (model_.time_dependent()) return build(t).a;
  return static_tensors_.a;
}

RVec FilterEngine::drift(const FilterState& s) const {
  return drift_matrix(s.t) * s.e;
}

RVec FilterEngine::compensators(const FilterState& s) const {
  Tensors dyn;
  if (model_.time_dependent()) dyn = build(s.t);
  const Tensors& tn = model_.time_dependent() ? dyn : static_tensors_;
  const RVec w = gram_inv_ * s.e;
  RVec out(n_obs());
  for (int i = 0; i < n_obs(); ++i) out(i) = (tn.r[i] * w)(0);
  return out;
}

Eigen::MatrixXd FilterEngine::correlation(const FilterState& s) const {
  Tensors dyn;
  if (model_.time_dependent()) dyn = build(s.t);
  const Tensors& tn = model_.time_dependent() ? dyn : static_tensors_;
  const RVec w = gram_inv_ * s.e;
  Eigen::MatrixXd corr(n_obs(), n_obs());
  for (int i = 0; i < n_obs(); ++i)
    for (int k = i; k < n_obs(); ++k) {
      corr(i, k) = tn.s[i][k].dot(w);
      corr(k, i) = corr(i, k);
    }
  return corr;
}

std::vector<RVec> FilterEngine::gains(const FilterState& s, GainReport* rep) const {
  Tensors dyn;
  if (model_.time_dependent()) dyn = build(s.t);
  const Tensors& tn = model_.time_dependent() ? dyn : static_tensors_;
  const RVec w = gram_inv_ * s.e;
  const int mo = n_obs(), n = coords();

  Eigen::MatrixXd corr(mo, mo), rhs(mo, n);
  for (int i = 0; i < mo; ++i) {
    const RVec rv = tn.r[i] * w;
    rhs.row(i) = (rv - rv(0) * s.e).transpose();
  }
  for (int i = 0; i < mo; ++i)
    for (int k = i; k < mo; ++k) {
      corr(i, k) = tn.s[i][k].dot(w);
      corr(k, i) = corr(i, k);
    }
  PinvResult info;
  Eigen::MatrixXd kmat = pinv_solve(corr, rhs, &info);
  if (rep) {
    rep->rank = info.rank;
    rep->floor = info.floor;
    rep->residual = (corr * kmat - rhs).norm();
  }
  std::vector<RVec> out(mo);
  for (int i = 0; i < mo; ++i) out[i] = kmat.row(i).transpose();
  return out;
}

namespace {

void guard_state(const FilterEngine& eng, FilterState& s, const StepOptions& opt) {
  if (opt.project) s = eng.project(s);
  const Mat rho = eng.density(s);
  const int d = rho.rows();
  const double r =
      (rho - (rho.trace() / double(d)) * Mat::Identity(d, d)).norm();
  if (r > opt.ball_guard * eng.ball_radius()) {
    std::ostringstream os;
    os << "filter state left the physical ball (norm " << r << ", bound "
       << eng.ball_radius() << "); reduce the step size";
    throw std::runtime_error(os.str());
  }
}

}  // namespace

double FilterEngine::ball_radius() const {
  return std::sqrt((model_.d - 1.0) / model_.d);
}

FilterState FilterEngine::step_from_record(const FilterState& s, const RVec& dy,
                                           double dt, const StepOptions& opt) const {
  if (dy.size() != n_obs())
    throw std::invalid_argument("observation record has wrong width");
  Tensors dyn;
  if (model_.time_dependent()) dyn = build(s.t);
  const Tensors& tn = model_.time_dependent() ? dyn : static_tensors_;
  const RVec w = gram_inv_ * s.e;
  const int mo = n_obs(), n = coords();

  Eigen::MatrixXd corr(mo, mo), rhs(mo, n);
  RVec comp(mo);
  for (int i = 0; i < mo; ++i) {
    const RVec rv = tn.r[i] * w;
    comp(i) = rv(0);
    rhs.row(i) = (rv - comp(i) * s.e).transpose();
  }
  for (int i = 0; i < mo; ++i)
    for (int k = i; k < mo; ++k) {
      corr(i, k) = tn.s[i][k].dot(w);
      corr(k, i) = corr(i, k);
    }
  const Eigen::MatrixXd kmat = pinv_solve(corr, rhs);

  FilterState out;
  out.t = s.t + dt;
  out.e = s.e + (tn.a * s.e) * dt;
  for (int i = 0; i < mo; ++i)
    out.e += kmat.row(i).transpose() * (dy(i) - comp(i) * dt);
  guard_state(*this, out, opt);
  return out;
}

FilterState FilterEngine::step_diffusive(const FilterState& s, const RVec& xi,
                                         double dt, RVec* dy_out,
                                         const StepOptions& opt) const {
  if (xi.size() != n_obs())
    throw std::invalid_argument("noise vector has wrong width");
  for (const auto& o : obs_)
    if (!o.gauge_free())
      throw std::invalid_argument(
          "diffusive stepping needs gauge-free observations");
  Tensors dyn;
  if (model_.time_dependent()) dyn = build(s.t);
  const Tensors& tn = model_.time_dependent() ? dyn : static_tensors_;
  const RVec w = gram_inv_ * s.e;
  const int mo = n_obs(), n = coords();

  Eigen::MatrixXd corr(mo, mo), rhs(mo, n);
  RVec comp(mo);
  for (int i = 0; i < mo; ++i) {
    const RVec rv = tn.r[i] * w;
    comp(i) = rv(0);
    rhs.row(i) = (rv - comp(i) * s.e).transpose();
  }
  for (int i = 0; i < mo; ++i)
    for (int k = i; k < mo; ++k) {
      corr(i, k) = tn.s[i][k].dot(w);
      corr(k, i) = corr(i, k);
    }

  Eigen::MatrixXd kmat = Eigen::MatrixXd::Zero(mo, n);
  RVec innov = RVec::Zero(mo);
  if (mo > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
    const double floor = 1e-12 * std::max(corr.trace(), 0.0);
    for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j) {
      const double ev = es.eigenvalues()(j);
      if (ev <= floor) continue;
      const Eigen::VectorXd v = es.eigenvectors().col(j);
      kmat.noalias() += v * (v.transpose() * rhs) / ev;
      innov += v * (std::sqrt(ev * dt) * v.dot(xi));
    }
  }

  FilterState out;
  out.t = s.t + dt;
  out.e = s.e + (tn.a * s.e) * dt;
  for (int i = 0; i < mo; ++i) out.e += kmat.row(i).transpose() * innov(i);
  if (dy_out) *dy_out = comp * dt + innov;
  guard_state(*this, out, opt);
  return out;
}

FilterState FilterEngine::step_counting(const FilterState& s, const RVec& u,
                                        double dt, RVec* dn_out,
                                        const StepOptions& opt) const {
  if (u.size() != n_obs())
    throw std::invalid_argument("uniform vector has wrong width");
  for (const auto& o : obs_)
    if (o.kind != ObservationChannel::Kind::Counting)
      throw std::invalid_argument("counting stepping needs counting observations");
  Tensors dyn;
  if (model_.time_dependent()) dyn = build(s.t);
  const Tensors& tn = model_.time_dependent() ? dyn : static_tensors_;
  const RVec w = gram_inv_ * s.e;
  const int mo = n_obs(), n = coords();

  std::vector<RVec> rv(mo);
  RVec lam(mo);
  for (int i = 0; i < mo; ++i) {
    rv[i] = tn.r[i] * w;
    lam(i) = std::max(rv[i](0), 0.0);
    if (lam(i) * dt > 0.1 && !coarse_warned_.exchange(true))
      std::fprintf(stderr,
                   "warning: jump intensity %g makes dt = %g coarse; "
                   "expect scheme bias\n",
                   lam(i), dt);
  }
  if (dn_out) *dn_out = RVec::Zero(mo);

  FilterState out;
  out.t = s.t + dt;
  for (int i = 0; i < mo; ++i) {
    if (lam(i) > 1e-14 && u(i) < lam(i) * dt) {
      out.e = rv[i] / rv[i](0);  // exact reset replaces the Euler update
      if (dn_out) (*dn_out)(i) = 1.0;
      guard_state(*this, out, opt);
      return out;
    }
  }

  Eigen::MatrixXd corr(mo, mo), rhs(mo, n);
  for (int i = 0; i < mo; ++i) rhs.row(i) = (rv[i] - rv[i](0) * s.e).transpose();
  for (int i = 0; i < mo; ++i)
    for (int k = i; k < mo; ++k) {
      corr(i, k) = tn.s[i][k].dot(w);
      corr(k, i) = corr(i, k);
    }
  const Eigen::MatrixXd kmat = pinv_solve(corr, rhs);
  out.e = s.e + (tn.a * s.e) * dt;
  for (int i = 0; i < mo; ++i)
    out.e -= kmat.row(i).transpose() * (lam(i) * dt);
  guard_state(*this, out, opt);
  return out;
}

FilterEngine::LinearState FilterEngine::linear_from_density(const Mat& rho,
                                                            double t) const {
  const FilterState s = state_from_density(rho, t);
  return {s.t, s.e};
}

FilterEngine::LinearState FilterEngine::linear_step(const LinearState& s,
                                                    const RVec& dy, double dt) const {
  if (dy.size() != n_obs())
    throw std::invalid_argument("observation record has wrong width");
  for (const auto& o : obs_)
    if (!o.gauge_free())
      throw std::invalid_argument("linear propagation needs gauge-free observations");
  Tensors dyn;
  if (model_.time_dependent()) dyn = build(s.t);
  const Tensors& tn = model_.time_dependent() ? dyn : static_tensors_;
  const RVec w = gram_inv_ * s.g;
  LinearState out;
  out.t = s.t + dt;
  out.g = s.g + (tn.a * s.g) * dt;
  for (int i = 0; i < n_obs(); ++i) out.g += (tn.r[i] * w) * dy(i);
  return out;
}

FilterState FilterEngine::normalize(const LinearState& s) const {
  if (!(s.g(0) > 0))
    throw std::domain_error("unnormalized filter weight is not positive");
  FilterState out;
  out.t = s.t;
  out.e = s.g / s.g(0);
  return out;
}

FilterState FilterEngine::project(const FilterState& s) const {
  Mat rho = density(s);
  rho = 0.5 * (rho + rho.adjoint());
  Eigen::SelfAdjointEigenSolver<Mat> es(rho);
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), 0.0);
  const double total = ev.sum();
  if (!(total > 0))
    throw std::runtime_error("state projection collapsed to zero");
  ev *= s.e(0) / total;
  const Mat fixed =
      es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
  FilterState out = state_from_density(fixed, s.t);
  return out;
}

std::vector<InitialBranch> initial_condition(const FilterEngine& eng,
                                             const std::vector<Mat>& y0,
                                             const Vec& psi) {
  const double nrm = psi.norm();
  if (!(nrm > 0)) throw std::invalid_argument("initial state is zero");
  const Vec xi = psi / nrm;
  std::vector<Mat> xfam = eng.basis();
  fock::OracleTable table = fock::conditional_expectation_oracle(y0, xfam, xi);
  std::vector<InitialBranch> out;
  for (const auto& row : table.rows) {
    InitialBranch br;
    br.outcome = row.outcome;
    br.probability = row.probability;
    br.e = Eigen::Map<const RVec>(row.means.data(), row.means.size());
    out.push_back(std::move(br));
  }
  return out;
}

AffineEstimate initial_gain(const Mat& rho, const std::vector<Mat>& ys, const Mat& x) {
  auto mean = [&](const Mat& a) { return std::real((rho * a).trace()); };
  auto cov = [&](const Mat& a, const Mat& b) {
    return 0.5 * std::real((rho * (a * b + b * a)).trace()) - mean(a) * mean(b);
  };
  const int m = int(ys.size());
  Eigen::MatrixXd v(m, m);
  Eigen::MatrixXd c(m, 1);
  for (int i = 0; i < m; ++i) {
    c(i, 0) = cov(ys[i], x);
    for (int k = i; k < m; ++k) {
      v(i, k) = cov(ys[i], ys[k]);
      v(k, i) = v(i, k);
    }
  }
  AffineEstimate est;
  est.beta = pinv_solve(v, c).col(0);
  est.alpha = mean(x);
  for (int i = 0; i < m; ++i) est.alpha -= est.beta(i) * mean(ys[i]);
  return est;
}

}  // namespace qfilt::filter
