#include "dflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dflow/error.hpp"

namespace dflow::geometry {
namespace {

constexpr double kSincTaylorCutoff = 1e-4;
constexpr double kAntipodalTolerance = 1e-12;

double clamp_unit(double c) { return std::clamp(c, -1.0, 1.0); }

double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

}  // namespace

double wrap_displacement(double z) {
  const double shifted = z + 0.5;
  double r = shifted - std::floor(shifted);
  if (r >= 1.0) r = 0.0;
  return r - 0.5;
}

Eigen::MatrixXd torus_log(const Eigen::MatrixXd& f0, const Eigen::MatrixXd& f1) {
  return (f1 - f0).unaryExpr([](double z) { return wrap_displacement(z); });
}

Eigen::MatrixXd torus_exp(const Eigen::MatrixXd& f0, const Eigen::MatrixXd& v) {
  return (f0 + v).unaryExpr([](double x) { return wrap_unit(x); });
}

Eigen::MatrixXd remove_mean(const Eigen::MatrixXd& displacements) {
  if (displacements.rows() == 0) return displacements;
  const Eigen::RowVectorXd mean = displacements.colwise().mean();
  return displacements.rowwise() - mean;
}

Eigen::VectorXd simplex_to_sphere(const Eigen::VectorXd& mu) {
  if (mu.size() > 0 && mu.minCoeff() < -1e-12) {
    throw DataError("simplex_to_sphere: negative probability " +
                    std::to_string(mu.minCoeff()));
  }
  return mu.unaryExpr([](double p) { return std::sqrt(std::max(p, 0.0)); });
}

Eigen::VectorXd sphere_to_simplex(const Eigen::VectorXd& x) { return x.array().square(); }

double fisher_rao_distance(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu) {
  double bc = 0.0;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    bc += std::sqrt(std::max(mu[k], 0.0) * std::max(nu[k], 0.0));
  }
  return 2.0 * std::acos(clamp_unit(bc));
}

double sphere_distance(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return std::acos(clamp_unit(x.dot(y)));
}

double sinc(double x) {
  if (std::abs(x) < kSincTaylorCutoff) {
    const double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

Eigen::VectorXd sphere_exp(const Eigen::VectorXd& x0, const Eigen::VectorXd& v) {
  const double norm = v.norm();
  return std::cos(norm) * x0 + sinc(norm) * v;
}

Eigen::VectorXd sphere_log(const Eigen::VectorXd& x0, const Eigen::VectorXd& x1) {
  const double c = clamp_unit(x0.dot(x1));
  if (c <= -1.0 + kAntipodalTolerance) {
    throw NumericalError("sphere_log: antipodal points, logarithm undefined");
  }
  const double theta = std::acos(c);
  return (x1 - c * x0) / sinc(theta);
}

Eigen::VectorXd project_tangent(const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
  return v - v.dot(x) * x;
}

Eigen::VectorXd simplex_interpolate(const Eigen::VectorXd& mu0,
                                    const Eigen::VectorXd& mu1, double t) {
  if (t == 0.0) return mu0;
  if (t == 1.0) return mu1;
  const Eigen::VectorXd x0 = simplex_to_sphere(mu0);
  const Eigen::VectorXd x1 = simplex_to_sphere(mu1);
  return sphere_to_simplex(sphere_exp(x0, t * sphere_log(x0, x1)));
}

Eigen::VectorXd sample_uniform_simplex(int d, std::mt19937_64& rng) {
  std::exponential_distribution<double> exponential(1.0);
  Eigen::VectorXd out(d);
  for (int k = 0; k < d; ++k) out[k] = exponential(rng);
  return out / out.sum();
}

double angle_to_unconstrained(double degrees) {
  if (!(degrees > 60.0 && degrees <= 120.0)) {
    throw DataError("lattice angle " + std::to_string(degrees) +
                    " outside the transformable range (60, 120]");
  }
  const double p = (degrees - 60.0) / 120.0;
  return std::log(p / (1.0 - p));
}

double unconstrained_to_angle(double u) { return 120.0 / (1.0 + std::exp(-u)) + 60.0; }

UnconstrainedLattice lattice_to_unconstrained(const LatticeParams& lattice) {
  UnconstrainedLattice u;
  u << lattice.a, lattice.b, lattice.c, angle_to_unconstrained(lattice.alpha),
      angle_to_unconstrained(lattice.beta), angle_to_unconstrained(lattice.gamma);
  return u;
}

LatticeParams unconstrained_to_lattice(const UnconstrainedLattice& u) {
  return {u[0],
          u[1],
          u[2],
          unconstrained_to_angle(u[3]),
          unconstrained_to_angle(u[4]),
          unconstrained_to_angle(u[5])};
}

Eigen::Matrix3d lattice_matrix(const LatticeParams& l) {
  const double ca = std::cos(radians(l.alpha));
  const double cb = std::cos(radians(l.beta));
  const double cg = std::cos(radians(l.gamma));
  const double sg = std::sin(radians(l.gamma));
  const double cx = l.c * cb;
  const double cy = l.c * (ca - cb * cg) / sg;
  const double cz2 = l.c * l.c - cx * cx - cy * cy;
  if (!(cz2 > 0.0) || !(l.a > 0.0) || !(l.b > 0.0)) {
    throw NumericalError("lattice_matrix: degenerate cell");
  }
  Eigen::Matrix3d m;
  m.col(0) << l.a, 0.0, 0.0;
  m.col(1) << l.b * cg, l.b * sg, 0.0;
  m.col(2) << cx, cy, std::sqrt(cz2);
  if (m.determinant() <= 1e-10) throw NumericalError("lattice_matrix: degenerate cell");
  return m;
}

Eigen::Matrix3d metric_tensor(const LatticeParams& l) {
  const double ca = std::cos(radians(l.alpha));
  const double cb = std::cos(radians(l.beta));
  const double cg = std::cos(radians(l.gamma));
  Eigen::Matrix3d m;
  m << l.a * l.a, l.a * l.b * cg, l.a * l.c * cb,
       l.a * l.b * cg, l.b * l.b, l.b * l.c * ca,
       l.a * l.c * cb, l.b * l.c * ca, l.c * l.c;
  return m;
}

double cell_volume(const LatticeParams& lattice) {
  return lattice_matrix(lattice).determinant();
}

LengthPrior LengthPrior::fit(std::span<const LatticeParams> lattices) {
  LengthPrior prior;
  if (lattices.empty()) return prior;
  const double n = static_cast<double>(lattices.size());
  for (int axis = 0; axis < 3; ++axis) {
    auto length = [axis](const LatticeParams& l) {
      return axis == 0 ? l.a : (axis == 1 ? l.b : l.c);
    };
    double mean = 0.0;
    for (const auto& l : lattices) mean += std::log(length(l));
    mean /= n;
    double var = 0.0;
    for (const auto& l : lattices) var += std::pow(std::log(length(l)) - mean, 2);
    var = lattices.size() > 1 ? var / (n - 1.0) : 0.0;
    prior.loc[axis] = mean;
    prior.scale[axis] = std::max(std::sqrt(var), 1e-3);
  }
  return prior;
}

FlowState sample_priors(int num_sites, int vocab_size, int order, std::mt19937_64& rng,
                        const LengthPrior& prior) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FlowState state;
  for (int axis = 0; axis < 3; ++axis) {
    state.lattice[axis] = std::exp(prior.loc[axis] + prior.scale[axis] * normal(rng));
  }
  for (int k = 0; k < 3; ++k) {
    double angle = 60.0;
    while (!(angle > 60.0 && angle < 120.0)) angle = 60.0 + 60.0 * unit(rng);
    state.lattice[3 + k] = angle_to_unconstrained(angle);
  }
  state.coords.resize(num_sites, 3 * order);
  for (Eigen::Index i = 0; i < state.coords.size(); ++i) state.coords.data()[i] = unit(rng);
  state.s.resize(num_sites, vocab_size);
  state.w.resize(num_sites, order);
  for (int i = 0; i < num_sites; ++i) {
    state.s.row(i) = sample_uniform_simplex(vocab_size, rng).transpose();
    state.w.row(i) = sample_uniform_simplex(order, rng).transpose();
  }
  return state;
}

FlowState state_from_crystal(const DisorderedCrystal& crystal) {
  const int n = crystal.num_sites();
  const int order = crystal.order();
  FlowState state;
  state.lattice = lattice_to_unconstrained(crystal.lattice());
  state.coords.resize(n, 3 * order);
  state.s.resize(n, crystal.vocab_size());
  state.w.resize(n, order);
  for (int i = 0; i < n; ++i) {
    const Site& site = crystal.site(i);
    for (int l = 0; l < order; ++l) {
      state.coords.block(i, 3 * l, 1, 3) = site.positions.row(l);
    }
    state.s.row(i) = site.s.transpose();
    state.w.row(i) = site.pos_weights.transpose();
  }
  return state;
}

}  // namespace dflow::geometry
