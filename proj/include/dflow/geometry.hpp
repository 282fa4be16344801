#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <array>
#include <random>
#include <span>

#include "dflow/crystal.hpp"
#include "dflow/flow_state.hpp"

/// Closed-form kernels for the three manifold factors of a crystal:
/// the flat torus (fractional coordinates), the positive orthant of the unit
/// sphere (disorder weights through the square-root map), and an unconstrained
/// Euclidean chart for the lattice parameters.
namespace dflow::geometry {

// ---- flat torus -----------------------------------------------------------

/// Shortest periodic representative of a displacement, in [-0.5, 0.5).
double wrap_displacement(double z);

/// Componentwise wrap(f1 - f0).
Eigen::MatrixXd torus_log(const Eigen::MatrixXd& f0, const Eigen::MatrixXd& f1);

/// Componentwise (f0 + v) mod 1.
Eigen::MatrixXd torus_exp(const Eigen::MatrixXd& f0, const Eigen::MatrixXd& v);

/// Subtracts the per-column mean. Output is not re-wrapped.
Eigen::MatrixXd remove_mean(const Eigen::MatrixXd& displacements);

// ---- simplex / sphere -----------------------------------------------------

Eigen::VectorXd simplex_to_sphere(const Eigen::VectorXd& mu);
Eigen::VectorXd sphere_to_simplex(const Eigen::VectorXd& x);

/// 2 arccos(sum_k sqrt(mu_k nu_k)).
double fisher_rao_distance(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu);

/// Great-circle distance between unit vectors.
double sphere_distance(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// sin(x)/x with sinc(0) = 1.
double sinc(double x);

Eigen::VectorXd sphere_exp(const Eigen::VectorXd& x0, const Eigen::VectorXd& v);

/// Throws NumericalError for (near-)antipodal inputs.
Eigen::VectorXd sphere_log(const Eigen::VectorXd& x0, const Eigen::VectorXd& x1);

/// Removes the component of v along the unit vector x.
Eigen::VectorXd project_tangent(const Eigen::VectorXd& x, const Eigen::VectorXd& v);

/// Fisher-Rao geodesic between two simplex points, evaluated at t in [0, 1].
Eigen::VectorXd simplex_interpolate(const Eigen::VectorXd& mu0,
                                    const Eigen::VectorXd& mu1, double t);

/// Uniform (Dirichlet(1,...,1)) draw on the simplex of dimension d - 1.
Eigen::VectorXd sample_uniform_simplex(int d, std::mt19937_64& rng);

// ---- lattice ----------------------------------------------------------------

/// logit((angle - 60) / 120); throws DataError for angles outside (60, 120].
double angle_to_unconstrained(double degrees);
/// 120 sigmoid(u) + 60.
double unconstrained_to_angle(double u);

UnconstrainedLattice lattice_to_unconstrained(const LatticeParams& lattice);
/// Inverse transform without clamping; angles may exceed 120.
LatticeParams unconstrained_to_lattice(const UnconstrainedLattice& u);

/// Columns are the cell vectors: a along x, b in the xy plane.
/// Throws NumericalError for a degenerate cell.
Eigen::Matrix3d lattice_matrix(const LatticeParams& lattice);

/// Metric tensor L^T L, evaluated from the cell parameters directly so that it
/// stays defined for any angles.
Eigen::Matrix3d metric_tensor(const LatticeParams& lattice);

double cell_volume(const LatticeParams& lattice);

// ---- priors -----------------------------------------------------------------

/// Per-axis LogNormal parameters for the cell lengths.
struct LengthPrior {
  std::array<double, 3> loc{1.0, 1.0, 1.0};
  std::array<double, 3> scale{0.5, 0.5, 0.5};

  /// Log-mean and log-std per axis; falls back to the defaults on empty input.
  static LengthPrior fit(std::span<const LatticeParams> lattices);
};

/// Independent draws for every field of an N-site state at t = 0.
FlowState sample_priors(int num_sites, int vocab_size, int order, std::mt19937_64& rng,
                        const LengthPrior& prior);

/// Data endpoint of a crystal: unconstrained lattice, flattened coordinates,
/// and the raw probability vectors.
FlowState state_from_crystal(const DisorderedCrystal& crystal);

}  // namespace dflow::geometry
