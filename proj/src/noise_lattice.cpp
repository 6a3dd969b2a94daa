#include "qfilt/noise_lattice.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cstdlib>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace qfilt::fock {

namespace {

std::int64_t env_cap(const char* name, std::int64_t fallback) {
  if (const char* s = std::getenv(name)) {
    char* end = nullptr;
    long long v = std::strtoll(s, &end, 10);
    if (end != s && v > 0) return v;
  }
  return fallback;
}

Mat lowering(int levels) {
  Mat a = Mat::Zero(levels, levels);
  for (int n = 1; n < levels; ++n) a(n - 1, n) = std::sqrt(double(n));
  return a;
}

}  // namespace

NoiseLattice::NoiseLattice(int bins, double dt, int q, int channels, int d_sys)
    : bins_(bins), q_(q), channels_(channels), d_sys_(d_sys), dt_(dt) {
  if (bins < 1) throw std::invalid_argument("NoiseLattice: bins must be >= 1");
  if (!(dt > 0)) throw std::invalid_argument("NoiseLattice: dt must be positive");
  if (q < 1) throw std::invalid_argument("NoiseLattice: q must be >= 1");
  if (channels < 1) throw std::invalid_argument("NoiseLattice: channels must be >= 1");
  if (d_sys < 1) throw std::invalid_argument("NoiseLattice: d_sys must be >= 1");
  const std::int64_t cap = amplitude_cap();
  std::int64_t dim = d_sys;
  for (int f = 0; f < bins * channels; ++f) {
    dim *= (q + 1);
    if (dim > cap) {
      std::ostringstream os;
      os << "NoiseLattice: state dimension exceeds cap " << cap
         << " (raise QFILT_DIM_CAP to override)";
      throw std::invalid_argument(os.str());
    }
  }
  dim_ = dim;
}

int NoiseLattice::factor(int bin, int channel) const {
  if (bin < 0 || bin >= bins_) throw std::out_of_range("NoiseLattice: bin out of range");
  if (channel < 1 || channel > channels_)
    throw std::out_of_range("NoiseLattice: channel out of range");
  return 1 + bin * channels_ + (channel - 1);
}

Vec NoiseLattice::vacuum(const Vec& psi) const {
  if (psi.size() != d_sys_)
    throw std::invalid_argument("NoiseLattice: system state has wrong dimension");
  Vec out = Vec::Zero(dim_);
  const std::int64_t noise_dim = dim_ / d_sys_;
  for (int s = 0; s < d_sys_; ++s) out(s * noise_dim) = psi(s);
  return out;
}

std::int64_t NoiseLattice::amplitude_cap() { return env_cap("QFILT_DIM_CAP", 1 << 20); }

std::int64_t NoiseLattice::operator_cap() { return env_cap("QFILT_OP_DIM_CAP", 2048); }

void NoiseLattice::require_operator_budget() const {
  const std::int64_t cap = operator_cap();
  if (dim_ > cap) {
    std::ostringstream os;
    os << "NoiseLattice: dense operators need dimension <= " << cap
       << ", lattice has " << dim_ << " (raise QFILT_OP_DIM_CAP to override)";
    throw std::invalid_argument(os.str());
  }
}

Mat embed_local(const NoiseLattice& lat, const Mat& local, const std::vector<int>& factors) {
  lat.require_operator_budget();
  const int nf = lat.factor_count();
  std::vector<std::int64_t> stride(nf);
  std::int64_t s = 1;
  for (int f = nf - 1; f >= 0; --f) {
    stride[f] = s;
    s *= lat.factor_dim(f);
  }

  std::vector<char> used(nf, 0);
  std::int64_t ld = 1;
  for (int f : factors) {
    if (f < 0 || f >= nf) throw std::out_of_range("embed_local: factor out of range");
    if (used[f]) throw std::invalid_argument("embed_local: repeated factor");
    used[f] = 1;
    ld *= lat.factor_dim(f);
  }
  if (local.rows() != ld || local.cols() != ld)
    throw std::invalid_argument("embed_local: operator does not match factor dimensions");

  /* global offset of each local index, local digits ordered as in `factors` */
  std::vector<std::int64_t> off(ld, 0);
  for (std::int64_t a = 0; a < ld; ++a) {
    std::int64_t rem = a;
    for (int i = int(factors.size()) - 1; i >= 0; --i) {
      const int f = factors[i];
      const int dim = lat.factor_dim(f);
      off[a] += (rem % dim) * stride[f];
      rem /= dim;
    }
  }

  std::vector<int> comp;
  for (int f = 0; f < nf; ++f)
    if (!used[f]) comp.push_back(f);
  const std::int64_t comp_dim = lat.dim() / ld;

  Mat out = Mat::Zero(lat.dim(), lat.dim());
  for (std::int64_t c = 0; c < comp_dim; ++c) {
    std::int64_t base = 0, rem = c;
    for (int i = int(comp.size()) - 1; i >= 0; --i) {
      const int f = comp[i];
      const int dim = lat.factor_dim(f);
      base += (rem % dim) * stride[f];
      rem /= dim;
    }
    for (std::int64_t a = 0; a < ld; ++a)
      for (std::int64_t b = 0; b < ld; ++b) {
        const cxd v = local(a, b);
        if (v != cxd(0, 0)) out(base + off[a], base + off[b]) = v;
      }
  }
  return out;
}

LatticeOp embed_system(const NoiseLattice& lat, const Mat& sys) {
  if (sys.rows() != lat.d_sys() || sys.cols() != lat.d_sys())
    throw std::invalid_argument("embed_system: wrong system dimension");
  return {embed_local(lat, sys, {0}), -1};
}

LatticeOp basic_increment(const NoiseLattice& lat, IncKind kind, int bin,
                          int ch_i, int ch_k) {
  lat.require_operator_budget();
  const double rdt = std::sqrt(lat.dt());
  const Mat a = lowering(lat.level_dim());
  switch (kind) {
    case IncKind::Annihilation:
      return {embed_local(lat, (rdt * a).eval(), {lat.factor(bin, ch_i)}), bin};
    case IncKind::Creation:
      return {embed_local(lat, (rdt * a.adjoint()).eval(), {lat.factor(bin, ch_i)}), bin};
    case IncKind::Number: {
      const int fi = lat.factor(bin, ch_i);
      const int fk = lat.factor(bin, ch_k);
      if (fi == fk) return {embed_local(lat, (a.adjoint() * a).eval(), {fi}), bin};
      return {embed_local(lat, kron(a.adjoint(), a), {fi, fk}), bin};
    }
    case IncKind::Time:
      lat.factor(bin, 1);  // range check only
      return {Mat(lat.dt() * Mat::Identity(lat.dim(), lat.dim())), bin};
  }
  throw std::logic_error("basic_increment: bad kind");
}

namespace {

IncKind slot_kind(const NoiseLattice& lat, star::Block row, star::Block col,
                  int& ch_i, int& ch_k) {
  using Tag = star::Block::Tag;
  ch_i = ch_k = 1;
  if (row.tag == Tag::Minus && col.tag == Tag::Plus) return IncKind::Time;
  if (row.tag == Tag::Minus && col.tag == Tag::Channel) {
    ch_i = col.k;
    return IncKind::Annihilation;
  }
  if (row.tag == Tag::Channel && col.tag == Tag::Plus) {
    ch_i = row.k;
    return IncKind::Creation;
  }
  if (row.tag == Tag::Channel && col.tag == Tag::Channel) {
    ch_i = row.k;
    ch_k = col.k;
    return IncKind::Number;
  }
  (void)lat;
  throw std::invalid_argument("ito_term: slot is not an integrator slot");
}

}  // namespace

LatticeOp ito_term(const NoiseLattice& lat, int bin, star::Block row,
                   star::Block col, const LatticeOp& coeff) {
  if (coeff.horizon >= bin)
    throw std::invalid_argument("ito_term: coefficient not adapted at this bin");
  int ci = 1, ck = 1;
  const IncKind kind = slot_kind(lat, row, col, ci, ck);
  LatticeOp inc = basic_increment(lat, kind, bin, ci, ck);
  return {coeff.mat * inc.mat, bin};
}

LatticeOp ito_sum_integral(const NoiseLattice& lat,
                           const std::vector<star::StarMatrix>& coeff_per_bin) {
  if (int(coeff_per_bin.size()) != lat.bins())
    throw std::invalid_argument("ito_sum_integral: need one coefficient matrix per bin");
  lat.require_operator_budget();
  Mat acc = Mat::Zero(lat.dim(), lat.dim());
  for (int b = 0; b < lat.bins(); ++b) {
    const star::StarMatrix& c = coeff_per_bin[b];
    if (c.shape() != star::Shape::Input)
      throw std::invalid_argument("ito_sum_integral: coefficients must be input form");
    if (c.m() != lat.channels())
      throw std::invalid_argument("ito_sum_integral: channel count mismatch");
    if (c.ring() == star::Ring::Operator && c.d() != lat.d_sys())
      throw std::invalid_argument("ito_sum_integral: system dimension mismatch");
    std::vector<star::Block> rows, cols;
    rows.push_back(star::Block::minus());
    cols.push_back(star::Block::plus());
    for (int k = 1; k <= lat.channels(); ++k) {
      rows.push_back(star::Block::channel(k));
      cols.push_back(star::Block::channel(k));
    }
    for (const auto& r : rows)
      for (const auto& cl : cols) {
        Mat entry;
        if (c.ring() == star::Ring::Scalar)
          entry = c.scalar_at(r, cl) * Mat::Identity(lat.d_sys(), lat.d_sys());
        else
          entry = c.at(r, cl);
        if (entry.norm() == 0.0) continue;
        LatticeOp term = ito_term(lat, b, r, cl, embed_system(lat, entry));
        acc += term.mat;
      }
  }
  return {std::move(acc), lat.bins() - 1};
}

LatticeOp ito_sum_integral(const NoiseLattice& lat, const star::StarMatrix& coeff) {
  return ito_sum_integral(lat, std::vector<star::StarMatrix>(lat.bins(), coeff));
}

double horizon_violation(const NoiseLattice& lat, const LatticeOp& op,
                         int samples, unsigned seed) {
  if (op.mat.rows() != lat.dim() || op.mat.cols() != lat.dim())
    throw std::invalid_argument("horizon_violation: operator has wrong dimension");
  const int nf = lat.factor_count();
  std::vector<std::int64_t> stride(nf);
  std::int64_t s = 1;
  for (int f = nf - 1; f >= 0; --f) {
    stride[f] = s;
    s *= lat.factor_dim(f);
  }
  std::vector<int> head, tail;
  head.push_back(0);
  for (int b = 0; b < lat.bins(); ++b)
    for (int c = 1; c <= lat.channels(); ++c)
      (b <= op.horizon ? head : tail).push_back(lat.factor(b, c));
  if (tail.empty()) return 0.0;

  auto compose = [&](const std::vector<int>& fs, std::int64_t idx) {
    std::int64_t out = 0;
    for (int i = int(fs.size()) - 1; i >= 0; --i) {
      const int f = fs[i];
      const int dim = lat.factor_dim(f);
      out += (idx % dim) * stride[f];
      idx /= dim;
    }
    return out;
  };
  std::int64_t head_dim = 1, tail_dim = 1;
  for (int f : head) head_dim *= lat.factor_dim(f);
  for (int f : tail) tail_dim *= lat.factor_dim(f);

  std::mt19937 gen(seed);
  std::uniform_int_distribution<std::int64_t> head_pick(0, head_dim - 1);
  std::uniform_int_distribution<std::int64_t> tail_pick(0, tail_dim - 1);
  double worst = 0.0;
  for (int it = 0; it < samples; ++it) {
    const std::int64_t hi = head_pick(gen), hj = head_pick(gen);
    std::int64_t ts = tail_pick(gen), tt = tail_pick(gen);
    if (ts == tt) tt = (tt + 1) % tail_dim;
    const std::int64_t oi = compose(head, hi), oj = compose(head, hj);
    const std::int64_t os = compose(tail, ts), ot = compose(tail, tt);
    /* off-diagonal in the tail digits must vanish */
    worst = std::max(worst, std::abs(op.mat(oi + os, oj + ot)));
    /* diagonal in the tail digits must not depend on them */
    worst = std::max(worst,
                     std::abs(op.mat(oi + os, oj + os) - op.mat(oi + ot, oj + ot)));
  }
  return worst;
}

namespace {

/* entry of a star matrix as a d_sys x d_sys operator */
Mat entry_op(const star::StarMatrix& k, star::Block r, star::Block c, int d_sys) {
  if (k.ring() == star::Ring::Scalar)
    return k.scalar_at(r, c) * Mat::Identity(d_sys, d_sys);
  return k.at(r, c);
}

/* skew-adjoint (in the star sense) logarithm of a star-unitary generator */
star::StarMatrix star_log(const star::StarMatrix& z) {
  using star::Block;
  using star::StarMatrix;
  const int m = z.m(), d = z.d();
  const StarMatrix delta = StarMatrix::identity_delta(z.ring(), m, d);
  StarMatrix n = z - delta;

  double diag_dev = 0.0;
  diag_dev = std::max(diag_dev, n.at(Block::minus(), Block::minus()).norm());
  diag_dev = std::max(diag_dev, n.at(Block::plus(), Block::plus()).norm());
  for (int i = 1; i <= m; ++i)
    for (int k = 1; k <= m; ++k)
      diag_dev = std::max(diag_dev, n.at(Block::channel(i), Block::channel(k)).norm());

  StarMatrix k(star::Shape::Generator, z.ring(), m, d);
  if (diag_dev < 1e-12 * (1.0 + z.norm())) {
    /* unipotent case: n is strictly upper in the sector grading, so the
     * logarithm series terminates after the square */
    StarMatrix n2 = matmul(n, n);
    n2 *= -0.5;
    k = n + n2;
  } else {
    const Mat kf = Mat(z.flatten().log());
    k = StarMatrix::unflatten(kf, star::Shape::Generator, z.ring(), m, d,
                              1e-9 * (1.0 + kf.norm()));
  }
  StarMatrix skew = k - k.star();
  skew *= 0.5;
  const double res = (Mat(skew.flatten().exp()) - z.flatten()).norm();
  if (res > 1e-9 * (1.0 + z.norm())) {
    std::ostringstream os;
    os << "unitary_cocycle: generator logarithm failed, exp residual " << res;
    throw std::runtime_error(os.str());
  }
  return skew;
}

/* one-bin update on the local space system x (q+1)^channels */
Mat bin_update(const NoiseLattice& lat, const star::StarMatrix& z, Propagation scheme) {
  using star::Block;
  const int m = lat.channels(), d = lat.d_sys(), lev = lat.level_dim();
  const double dt = lat.dt(), rdt = std::sqrt(dt);

  auto cls = star::classify(z, 1e-8);
  if (!cls.unitary) {
    std::ostringstream os;
    os << "unitary_cocycle: generator is not star-unitary (isometry residual "
       << cls.r_isometric << ", co-isometry residual " << cls.r_counitary << ")";
    throw std::invalid_argument(os.str());
  }
  if (z.shape() != star::Shape::Generator)
    throw std::invalid_argument("unitary_cocycle: generator form required");
  if (z.m() != m) throw std::invalid_argument("unitary_cocycle: channel count mismatch");
  if (z.ring() == star::Ring::Operator && z.d() != d)
    throw std::invalid_argument("unitary_cocycle: system dimension mismatch");

  const Mat a = lowering(lev);
  std::int64_t noise_dim = 1;
  for (int c = 0; c < m; ++c) noise_dim *= lev;
  auto chan_op = [&](int c, const Mat& op) {  // c is 1-based
    Mat out = Mat::Identity(1, 1);
    for (int j = 1; j <= m; ++j)
      out = kron(out, j == c ? op : Mat(Mat::Identity(lev, lev)));
    return out;
  };
  const Mat noise_id = Mat::Identity(noise_dim, noise_dim);

  auto contract = [&](const star::StarMatrix& c) {
    Mat g = kron(entry_op(c, Block::minus(), Block::plus(), d), noise_id) * dt;
    for (int kk = 1; kk <= m; ++kk) {
      g += kron(entry_op(c, Block::channel(kk), Block::plus(), d),
                chan_op(kk, a.adjoint())) * rdt;
      g += kron(entry_op(c, Block::minus(), Block::channel(kk), d),
                chan_op(kk, a)) * rdt;
    }
    for (int i = 1; i <= m; ++i)
      for (int kk = 1; kk <= m; ++kk) {
        const Mat e = entry_op(c, Block::channel(i), Block::channel(kk), d);
        if (e.norm() == 0.0) continue;
        g += kron(e, Mat(chan_op(i, a.adjoint()) * chan_op(kk, a)));
      }
    return g;
  };

  if (scheme == Propagation::Euler) {
    const star::StarMatrix n =
        z - star::StarMatrix::identity_delta(z.ring(), m, z.d());
    return Mat::Identity(d * noise_dim, d * noise_dim) + contract(n);
  }
  const Mat g = contract(star_log(z));
  return g.exp();
}

}  // namespace

Cocycle unitary_cocycle(const NoiseLattice& lat,
                        const std::vector<star::StarMatrix>& z_per_bin,
                        Propagation scheme) {
  if (int(z_per_bin.size()) != lat.bins())
    throw std::invalid_argument("unitary_cocycle: need one generator per bin");
  lat.require_operator_budget();
  Cocycle out;
  out.scheme = scheme;
  out.U.reserve(lat.bins() + 1);
  out.U.push_back(Mat::Identity(lat.dim(), lat.dim()));
  for (int b = 0; b < lat.bins(); ++b) {
    const Mat m_loc = bin_update(lat, z_per_bin[b], scheme);
    std::vector<int> factors{0};
    for (int c = 1; c <= lat.channels(); ++c) factors.push_back(lat.factor(b, c));
    const Mat m_full = embed_local(lat, m_loc, factors);
    out.U.push_back(m_full * out.U.back());
  }
  return out;
}

Cocycle unitary_cocycle(const NoiseLattice& lat, const star::StarMatrix& z,
                        Propagation scheme) {
  return unitary_cocycle(lat, std::vector<star::StarMatrix>(lat.bins(), z), scheme);
}

Mat quadrature_increment(const NoiseLattice& lat, int channel, int bin) {
  const Mat a = lowering(lat.level_dim());
  const Mat local = std::sqrt(lat.dt()) * (a + a.adjoint());
  return embed_local(lat, local, {lat.factor(bin, channel)});
}

std::vector<Mat> output_process(const NoiseLattice& lat, const Cocycle& c, int channel) {
  const Mat& un = c.U.back();
  std::vector<Mat> ys;
  ys.reserve(lat.bins() + 1);
  Mat w = Mat::Zero(lat.dim(), lat.dim());
  ys.push_back(w);
  for (int b = 0; b < lat.bins(); ++b) {
    w += quadrature_increment(lat, channel, b);
    ys.push_back(un.adjoint() * w * un);
  }
  return ys;
}

std::vector<Mat> output_increments(const NoiseLattice& lat, const Cocycle& c, int channel) {
  const Mat& un = c.U.back();
  std::vector<Mat> dys;
  dys.reserve(lat.bins());
  for (int b = 0; b < lat.bins(); ++b)
    dys.push_back(un.adjoint() * quadrature_increment(lat, channel, b) * un);
  return dys;
}

std::vector<Mat> system_process(const NoiseLattice& lat, const Cocycle& c, const Mat& x) {
  const Mat xe = embed_system(lat, x).mat;
  std::vector<Mat> xs;
  xs.reserve(c.U.size());
  for (const Mat& u : c.U) xs.push_back(u.adjoint() * xe * u);
  return xs;
}

NondemReport nondemolition_residuals(const std::vector<Mat>& ys,
                                     const std::vector<Mat>& xs) {
  NondemReport rep;
  rep.residual = Eigen::MatrixXd::Zero(ys.size(), xs.size());
  for (std::size_t i = 0; i < ys.size(); ++i)
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const double r = (ys[i] * xs[j] - xs[j] * ys[i]).norm();
      rep.residual(i, j) = r;
      if (i <= j) {
        rep.max_forward = std::max(rep.max_forward, r);
      } else if (r > rep.max_backward) {
        rep.max_backward = r;
        rep.backward_i = int(i);
        rep.backward_j = int(j);
      }
    }
  for (std::size_t i = 0; i < ys.size(); ++i)
    for (std::size_t k = i + 1; k < ys.size(); ++k)
      rep.max_self =
          std::max(rep.max_self, (ys[i] * ys[k] - ys[k] * ys[i]).norm());
  return rep;
}

OracleTable conditional_expectation_oracle(const std::vector<Mat>& y_family,
                                           const std::vector<Mat>& x_family,
                                           const Vec& xi, double cluster_tol,
                                           double drop_tol) {
  const Eigen::Index n = xi.size();
  for (const Mat& y : y_family)
    if (y.rows() != n || y.cols() != n)
      throw std::invalid_argument("oracle: observable has wrong dimension");
  for (const Mat& x : x_family)
    if (x.rows() != n || x.cols() != n)
      throw std::invalid_argument("oracle: queried observable has wrong dimension");
  for (std::size_t i = 0; i < y_family.size(); ++i) {
    const double h = (y_family[i] - y_family[i].adjoint()).norm();
    if (h > 1e-8 * (1.0 + y_family[i].norm())) {
      std::ostringstream os;
      os << "oracle: observed family member " << i << " is not self-adjoint"
         << " (residual " << h << ")";
      throw std::invalid_argument(os.str());
    }
    for (std::size_t k = i + 1; k < y_family.size(); ++k) {
      const double r = (y_family[i] * y_family[k] - y_family[k] * y_family[i]).norm();
      const double scale = 1.0 + y_family[i].norm() * y_family[k].norm();
      if (r > 1e-8 * scale) {
        std::ostringstream os;
        os << "oracle: observed family members " << i << " and " << k
           << " do not commute (residual " << r << ")";
        throw std::invalid_argument(os.str());
      }
    }
  }

  struct Blk {
    Mat basis;
    std::vector<double> vals;
  };
  std::vector<Blk> blocks;
  blocks.push_back({Mat::Identity(n, n), {}});
  for (const Mat& y : y_family) {
    std::vector<Blk> next;
    for (const Blk& blk : blocks) {
      Mat mm = blk.basis.adjoint() * y * blk.basis;
      mm = 0.5 * (mm + mm.adjoint());
      Eigen::SelfAdjointEigenSolver<Mat> es(mm);
      const Eigen::VectorXd ev = es.eigenvalues();
      const Mat& v = es.eigenvectors();
      Eigen::Index a = 0;
      while (a < ev.size()) {
        Eigen::Index b = a + 1;
        while (b < ev.size() && ev(b) - ev(b - 1) <= cluster_tol) ++b;
        Blk nb;
        nb.basis = blk.basis * v.middleCols(a, b - a);
        nb.vals = blk.vals;
        nb.vals.push_back(ev.segment(a, b - a).mean());
        next.push_back(std::move(nb));
        a = b;
      }
    }
    blocks = std::move(next);
  }

  OracleTable table;
  for (const Blk& blk : blocks) {
    const Vec w = blk.basis.adjoint() * xi;
    const double mu = w.squaredNorm();
    if (mu <= drop_tol) continue;
    const Vec v = blk.basis * w;
    OracleRow row;
    row.outcome = blk.vals;
    row.probability = mu;
    for (const Mat& x : x_family)
      row.means.push_back(std::real(cxd(v.dot(x * v))) / mu);
    table.rows.push_back(std::move(row));
  }
  std::sort(table.rows.begin(), table.rows.end(),
            [](const OracleRow& a, const OracleRow& b) {
              return std::lexicographical_compare(a.outcome.begin(), a.outcome.end(),
                                                  b.outcome.begin(), b.outcome.end());
            });
  return table;
}

std::string oracle_table_json(const OracleTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const OracleRow& r : table.rows) {
    nlohmann::json row;
    row["outcome"] = r.outcome;
    row["probability"] = r.probability;
    row["means"] = r.means;
    rows.push_back(row);
  }
  nlohmann::json root;
  root["rows"] = rows;
  return root.dump(2);
}

}  // namespace qfilt::fock
