#pragma once

#include <Eigen/Core>

namespace dflow {

/// (a, b, c, phi(alpha), phi(beta), phi(gamma)).
using UnconstrainedLattice = Eigen::Matrix<double, 6, 1>;

/// A crystal-shaped point on the product manifold.
///
/// Coordinates are stored flattened: row i holds the `order` positions of
/// site i as [x0 y0 z0 x1 y1 z1 ...]. Disorder weights are stored as simplex
/// points; their sphere images are the elementwise square roots.
struct FlowState {
  UnconstrainedLattice lattice = UnconstrainedLattice::Zero();
  Eigen::MatrixXd coords;  // N x 3*order
  Eigen::MatrixXd s;       // N x D
  Eigen::MatrixXd w;       // N x order

  int num_sites() const { return static_cast<int>(coords.rows()); }
  int order() const { return static_cast<int>(w.cols()); }
  int vocab_size() const { return static_cast<int>(s.cols()); }
};

/// Per-field tangent vectors, shaped like FlowState.
struct VelocityBundle {
  UnconstrainedLattice lattice = UnconstrainedLattice::Zero();
  Eigen::MatrixXd coords;
  Eigen::MatrixXd s;
  Eigen::MatrixXd w;

  static VelocityBundle zeros_like(const FlowState& state) {
    VelocityBundle v;
    v.coords = Eigen::MatrixXd::Zero(state.coords.rows(), state.coords.cols());
    v.s = Eigen::MatrixXd::Zero(state.s.rows(), state.s.cols());
    v.w = Eigen::MatrixXd::Zero(state.w.rows(), state.w.cols());
    return v;
  }
};

}  // namespace dflow
