#include "qfilt/verify.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "qfilt/filtering.hpp"
#include "qfilt/noise_lattice.hpp"
#include "qfilt/spin.hpp"
#include "qfilt/star_matrix.hpp"

namespace qfilt::sim {

namespace {

using star::Block;
using star::Ring;
using star::Shape;
using star::StarMatrix;

Mat rand_mat(std::mt19937& gen, int d) {
  std::normal_distribution<double> n;
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = cxd(n(gen), n(gen));
  return a;
}

StarMatrix rand_input(std::mt19937& gen, int m, int d) {
  StarMatrix c(Shape::Input, Ring::Operator, m, d);
  for (int i = 1; i <= m; ++i) {
    c.set(Block::minus(), Block::channel(i), rand_mat(gen, d));
    c.set(Block::channel(i), Block::plus(), rand_mat(gen, d));
    for (int k = 1; k <= m; ++k)
      c.set(Block::channel(i), Block::channel(k), rand_mat(gen, d));
  }
  c.set(Block::minus(), Block::plus(), rand_mat(gen, d));
  return c;
}

spin::SpinScenario demo_scenario() {
  spin::SpinScenario sc;
  sc.u = spin::Schedule3::constant({0.3, -0.2, 0.5});
  sc.rs = {spin::Schedule3::constant({0, 0, 2})};
  return sc;
}

double ito_scalar_table() {
  StarMatrix da(Shape::Input, Ring::Scalar, 1, 1), dap = da, dn = da, dtm = da;
  da.set(Block::minus(), Block::channel(1), cxd(1));
  dap.set(Block::channel(1), Block::plus(), cxd(1));
  dn.set(Block::channel(1), Block::channel(1), cxd(1));
  dtm.set(Block::minus(), Block::plus(), cxd(1));

  double worst = 0.0;
  worst = std::max(worst, star::distance(star::ito_product(da, dap), dtm));
  worst = std::max(worst, star::distance(star::ito_product(da, dn), da));
  worst = std::max(worst, star::distance(star::ito_product(dn, dap), dap));
  worst = std::max(worst, star::distance(star::ito_product(dn, dn), dn));
  for (const auto& z : {da, dap, dn, dtm}) {
    worst = std::max(worst, star::ito_product(dtm, z).norm());
    worst = std::max(worst, star::ito_product(z, dtm).norm());
  }
  return worst;
}

double ito_operator_table(std::mt19937& gen) {
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 2, d = 3;
    auto a = rand_input(gen, m, d);
    auto b = rand_input(gen, m, d);
    auto prod = star::ito_product(a, b);
    // independent channel contraction
    std::vector<Block> rows = {Block::minus(), Block::channel(1), Block::channel(2)};
    std::vector<Block> cols = {Block::channel(1), Block::channel(2), Block::plus()};
    for (const auto& r : rows)
      for (const auto& c : cols) {
        Mat expect = Mat::Zero(d, d);
        for (int k = 1; k <= m; ++k)
          expect += a.at(r, Block::channel(k)) * b.at(Block::channel(k), c);
        worst = std::max(worst, (prod.at(r, c) - expect).norm());
      }
  }
  return worst;
}

double involution_identities(std::mt19937& gen) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto a = rand_input(gen, 2, 2);
    auto b = rand_input(gen, 2, 2);
    worst = std::max(worst, star::distance(a.star().star(), a));
    worst = std::max(worst,
                     star::distance(star::ito_product(a, b).star(),
                                    star::ito_product(b.star(), a.star())));
  }
  return worst;
}

double generator_unitarity() {
  auto cls = star::classify(spin::generator_matrix(demo_scenario()), 1e-10);
  return std::max(cls.r_isometric, cls.r_counitary);
}

double lattice_ccr() {
  fock::NoiseLattice lat(1, 0.1, 2, 1, 1);
  auto da = fock::basic_increment(lat, fock::IncKind::Annihilation, 0);
  auto dap = fock::basic_increment(lat, fock::IncKind::Creation, 0);
  Mat comm = da.mat * dap.mat - dap.mat * da.mat;
  double worst = 0.0;
  std::vector<Vec> vecs;
  Vec v0 = Vec::Zero(3), v1 = Vec::Zero(3), vm = Vec::Zero(3);
  v0(0) = 1;
  v1(1) = 1;
  vm(0) = cxd(0.6, 0.3);
  vm(1) = cxd(-0.2, 0.7);
  for (const auto& v : {v0, v1, vm}) {
    const cxd lhs = v.dot(comm * v);
    const cxd rhs = lat.dt() * v.dot(v);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

double integral_duality(std::mt19937& gen) {
  fock::NoiseLattice lat(2, 0.2, 1, 1, 2);
  std::vector<StarMatrix> coeffs = {rand_input(gen, 1, 2), rand_input(gen, 1, 2)};
  auto integral = fock::ito_sum_integral(lat, coeffs);
  std::vector<StarMatrix> starred;
  for (const auto& c : coeffs) starred.push_back(c.star());
  auto dual = fock::ito_sum_integral(lat, starred);
  return (integral.mat.adjoint() - dual.mat).norm();
}

double annihilation_kills_vacuum() {
  fock::NoiseLattice lat(2, 0.2, 1, 1, 2);
  StarMatrix c(Shape::Input, Ring::Operator, 1, 2);
  c.set(Block::minus(), Block::channel(1), Mat::Identity(2, 2));
  auto integral = fock::ito_sum_integral(lat, c);
  Vec psi(2);
  psi << cxd(0.6, 0), cxd(0, 0.8);
  return (integral.mat * lat.vacuum(psi)).norm();
}

double cocycle_unitarity() {
  fock::NoiseLattice lat(4, 0.25, 1, 1, 2);
  auto c = fock::unitary_cocycle(lat, spin::generator_matrix(demo_scenario()));
  const auto& u = c.U.back();
  return (u.adjoint() * u - Mat::Identity(u.rows(), u.cols())).norm();
}

double gain_formula(std::mt19937& gen) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Vector3d r(n(gen), n(gen), n(gen));
    Eigen::Vector3d p(n(gen), n(gen), n(gen));
    p *= std::cbrt(uni(gen)) / std::max(p.norm(), 1e-12);
    spin::SpinScenario sc;
    sc.rs = {spin::Schedule3::constant(r)};
    auto eng = spin::spin_engine(sc);
    filter::FilterState s;
    s.t = 0;
    s.e = RVec(4);
    s.e << 1, p(0), p(1), p(2);
    auto g = eng.gains(s);
    const Eigen::Vector3d kappa(g[0](1), g[0](2), g[0](3));
    const Eigen::Vector3d expect = r - p.dot(r) * p;
    worst = std::max(worst, (kappa - expect).norm());
  }
  return worst;
}

double oracle_born_rule() {
  fock::NoiseLattice lat(1, 0.1, 1, 1, 2);
  auto s = pauli();
  std::vector<Mat> ys = {fock::embed_system(lat, s[2]).mat};
  std::vector<Mat> xs = {fock::embed_system(lat, s[0]).mat,
                         fock::embed_system(lat, s[2]).mat};
  Vec psi(2);
  psi << 0.6, 0.8;
  auto table = fock::conditional_expectation_oracle(ys, xs, lat.vacuum(psi));
  if (table.rows.size() != 2) return 1.0;
  double worst = 0.0;
  worst = std::max(worst, std::abs(table.rows[0].outcome[0] + 1.0));
  worst = std::max(worst, std::abs(table.rows[0].probability - 0.64));
  worst = std::max(worst, std::abs(table.rows[0].means[1] + 1.0));
  worst = std::max(worst, std::abs(table.rows[1].probability - 0.36));
  worst = std::max(worst, std::abs(table.rows[1].means[1] - 1.0));
  return worst;
}

double collapse_residual() {
  spin::SpinScenario sc;
  sc.rs = {spin::Schedule3::constant({0, 0, 2})};
  sc.horizon = 0.5;
  sc.dt = 1e-3;
  sc.seed = 31;
  auto rec = spin::simulate_spin(sc);
  auto lin = spin::simulate_spin_linear(sc, rec.dy);
  return spin::collapse_check(rec, lin, sc).max_abs_residual;
}

}  // namespace

std::vector<CheckResult> algebra_battery() {
  std::mt19937 gen(911);
  std::vector<CheckResult> out;
  auto push = [&out](const std::string& name, double residual, double tol) {
    out.push_back({name, residual, tol, residual < tol});
  };
  push("ito table, scalar entries", ito_scalar_table(), 1e-15);
  push("ito table, operator entries", ito_operator_table(gen), 1e-12);
  push("involution squares to identity / reverses products", involution_identities(gen), 1e-12);
  push("evolution generator is star-unitary", generator_unitarity(), 1e-10);
  push("commutation relation on a single bin", lattice_ccr(), 1e-12);
  push("integral of starred coefficients is the adjoint", integral_duality(gen), 1e-12);
  push("annihilation integral kills the vacuum", annihilation_kills_vacuum(), 1e-13);
  push("exact propagation stays unitary", cocycle_unitarity(), 1e-10);
  push("quadrature gain r - (p,r)p", gain_formula(gen), 1e-10);
  push("spectral oracle reproduces the Born rule", oracle_born_rule(), 1e-12);
  push("purity decay identity on one path", collapse_residual(), 0.15);
  return out;
}

bool all_pass(const std::vector<CheckResult>& checks) {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

std::string battery_report(const std::vector<CheckResult>& checks) {
  std::string out;
  char line[160];
  for (const auto& c : checks) {
    std::snprintf(line, sizeof(line), "%-52s %11.3e  (tol %8.0e)  %s\n",
                  c.name.c_str(), c.residual, c.tol, c.pass ? "PASS" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-52s %s\n", "overall",
                all_pass(checks) ? "PASS" : "FAIL");
  out += line;
  return out;
}

}  // namespace qfilt::sim
