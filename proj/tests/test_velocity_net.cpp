#include <catch_amalgamated.hpp>

#include <numbers>

#include "dflow/error.hpp"
#include "dflow/geometry.hpp"
#include "dflow/velocity_net.hpp"

using namespace dflow;
using Catch::Approx;

namespace {

NetConfig small(int vocab, int order) {
  NetConfig c;
  c.vocab_size = vocab;
  c.order = order;
  c.hidden_dim = 12;
  c.num_layers = 2;
  c.n_freq = 3;
  c.time_dim = 6;
  c.max_sites = 10;
  return c;
}

FlowState state(std::mt19937_64& rng, int n, int vocab, int order) {
  return geometry::sample_priors(n, vocab, order, rng, geometry::LengthPrior{});
}

double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

TEST_CASE("sinusoidal embedding layout") {
  const Eigen::RowVectorXd e = sinusoidal_embedding(Eigen::RowVector3d(0.25, 0.0, -0.125), 2);
  REQUIRE(e.size() == 12);
  CHECK(e[0] == Approx(1.0));                    // sin(2 pi 0.25)
  CHECK(e[1] == Approx(0.0).margin(1e-15));      // sin(4 pi 0.25)
  CHECK(e[2] == Approx(0.0).margin(1e-15));      // cos(2 pi 0.25)
  CHECK(e[3] == Approx(-1.0));                   // cos(4 pi 0.25)
  CHECK(e[4] == 0.0);
  CHECK(e[6] == 1.0);
  CHECK(e[8] == Approx(-std::sqrt(0.5)));        // sin(2 pi (-0.125))
  CHECK(e[10] == Approx(std::sqrt(0.5)));
  // Periodic in each displacement component.
  const Eigen::RowVectorXd shifted = sinusoidal_embedding(Eigen::RowVector3d(1.25, -1.0, 0.875), 2);
  CHECK(max_abs(shifted - e) < 1e-12);
}

TEST_CASE("time embedding") {
  const Eigen::RowVectorXd e = time_embedding(0.0, 8);
  CHECK(e.head(4).isZero());
  CHECK(e.tail(4).isOnes());
  CHECK(time_embedding(0.3, 8)[0] == Approx(std::sin(0.3)));
}

TEST_CASE("edge features") {
  const Eigen::Matrix3d metric = Eigen::Matrix3d::Identity() * 4.0;
  Eigen::MatrixXd fi(2, 3), fj(2, 3);
  fi << 0.1, 0.1, 0.1, 0.9, 0.9, 0.9;
  fj << 0.3, 0.1, 0.1, 0.5, 0.5, 0.5;
  const Eigen::Vector2d wi(1.0, 0.0), wj(0.6, 0.4);

  const EdgeFeatures concat = edge_features(fi, wi, fj, wj, metric, EdgeMode::Concat, 2);
  CHECK(concat.dist.size() + concat.dir.size() == edge_feature_dim(EdgeMode::Concat, 2, 2));
  // Blocks that involve the empty channel of site i are zero.
  CHECK(concat.dist.segment(2 * 12, 2 * 12).isZero());
  CHECK(concat.dir.segment(0, 3).isApprox(Eigen::RowVector3d(0.6, 0, 0)));

  const EdgeFeatures sum = edge_features(fi, wi, fj, wj, metric, EdgeMode::WeightedSum, 2);
  CHECK(sum.dist.size() + sum.dir.size() == edge_feature_dim(EdgeMode::WeightedSum, 2, 2));
  CHECK(max_abs(sum.dist - concat.dist.segment(0, 12) - concat.dist.segment(12, 12)) < 1e-15);

  // Displacements are wrapped: 0.1 -> 0.9 is a step of -0.2.
  Eigen::MatrixXd a(1, 3), b(1, 3);
  a << 0.1, 0.0, 0.0;
  b << 0.9, 0.0, 0.0;
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  const EdgeFeatures wrapped = edge_features(a, one, b, one, metric, EdgeMode::WeightedSum, 1);
  CHECK(wrapped.dir[0] == Approx(-1.0));
  CHECK(wrapped.dist[0] == Approx(std::sin(-0.4 * std::numbers::pi)));
}

TEST_CASE("edge mode follows the positional capacity") {
  NetConfig c;
  c.order = 2;
  CHECK(c.edge_mode() == EdgeMode::Concat);
  c.order = 1;
  CHECK(c.edge_mode() == EdgeMode::WeightedSum);
  c.order = 3;
  CHECK(c.edge_mode() == EdgeMode::WeightedSum);
}

TEST_CASE("initialized heads produce zero velocities") {
  std::mt19937_64 rng(1);
  VelocityNet net(small(5, 2));
  net.initialize(rng);
  const VelocityBundle v = net.evaluate(state(rng, 4, 5, 2), 0.3);
  CHECK(v.lattice.isZero());
  CHECK(v.coords.isZero());
  CHECK(v.s.isZero());
  CHECK(v.w.isZero());
}

TEST_CASE("outputs have the input shapes and are tangent") {
  std::mt19937_64 rng(2);
  VelocityNet net(small(5, 3));
  net.randomize(rng);
  const FlowState s = state(rng, 4, 5, 3);
  const VelocityBundle v = net.evaluate(s, 0.6);
  CHECK(v.coords.rows() == 4);
  CHECK(v.coords.cols() == 9);
  CHECK(v.s.cols() == 5);
  CHECK(v.w.cols() == 3);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(v.s.row(i).dot(s.s.row(i).cwiseSqrt())) < 1e-12);
    CHECK(std::abs(v.w.row(i).dot(s.w.row(i).cwiseSqrt())) < 1e-12);
  }
  CHECK(max_abs(v.coords) > 0.0);
}

TEST_CASE("batched evaluation equals separate evaluation") {
  std::mt19937_64 rng(3);
  VelocityNet net(small(4, 2));
  net.randomize(rng);
  const std::vector<FlowState> states{state(rng, 3, 4, 2), state(rng, 5, 4, 2)};
  const double times[] = {0.2, 0.9};
  const auto batch = net.evaluate(states, times);
  for (std::size_t g = 0; g < 2; ++g) {
    const VelocityBundle one = net.evaluate(states[g], times[g]);
    CHECK(max_abs(one.lattice - batch[g].lattice) < 1e-12);
    CHECK(max_abs(one.coords - batch[g].coords) < 1e-12);
    CHECK(max_abs(one.s - batch[g].s) < 1e-12);
  }
}

TEST_CASE("site permutation permutes the node outputs") {
  std::mt19937_64 rng(4);
  VelocityNet net(small(4, 2));
  net.randomize(rng);
  const FlowState s = state(rng, 4, 4, 2);
  const int perm[] = {2, 0, 3, 1};
  FlowState p = s;
  for (int i = 0; i < 4; ++i) {
    p.coords.row(i) = s.coords.row(perm[i]);
    p.s.row(i) = s.s.row(perm[i]);
    p.w.row(i) = s.w.row(perm[i]);
  }
  const VelocityBundle a = net.evaluate(s, 0.5), b = net.evaluate(p, 0.5);
  CHECK(max_abs(a.lattice - b.lattice) < 1e-12);
  for (int i = 0; i < 4; ++i) {
    CHECK(max_abs(b.coords.row(i) - a.coords.row(perm[i])) < 1e-12);
    CHECK(max_abs(b.w.row(i) - a.w.row(perm[i])) < 1e-12);
  }
}

TEST_CASE("empty position channels get no velocity") {
  std::mt19937_64 rng(5);
  VelocityNet net(small(4, 3));
  net.randomize(rng);
  FlowState s = state(rng, 3, 4, 3);
  s.w.row(1) << 1.0, 0.0, 0.0;
  s.coords.block(1, 3, 1, 6).setZero();
  const VelocityBundle v = net.evaluate(s, 0.4);
  CHECK(v.coords.block(1, 3, 1, 6).isZero());
  CHECK(v.w(1, 1) == 0.0);
  CHECK(v.w(1, 2) == 0.0);
  CHECK(max_abs(v.coords.row(0)) > 0.0);

  // A lower-order input is treated as zero padding.
  FlowState low = s;
  low.coords = s.coords.leftCols(3);
  low.w = Eigen::MatrixXd::Zero(3, 1);
  low.w.setOnes();
  FlowState padded = low;
  padded.coords = Eigen::MatrixXd::Zero(3, 9);
  padded.coords.leftCols(3) = low.coords;
  padded.w = Eigen::MatrixXd::Zero(3, 3);
  padded.w.col(0).setOnes();
  const VelocityBundle vl = net.evaluate(low, 0.4), vp = net.evaluate(padded, 0.4);
  CHECK(max_abs(vl.coords - vp.coords.leftCols(3)) < 1e-12);
  CHECK(max_abs(vl.lattice - vp.lattice) < 1e-12);
  CHECK(vp.coords.rightCols(6).isZero());
}

TEST_CASE("forward input checks") {
  std::mt19937_64 rng(6);
  VelocityNet net(small(4, 2));
  net.randomize(rng);
  CHECK_THROWS_AS(net.evaluate(state(rng, 11, 4, 2), 0.1), DataError);
  CHECK_THROWS_AS(net.evaluate(state(rng, 3, 5, 2), 0.1), DataError);
  CHECK_THROWS_AS(net.evaluate(state(rng, 3, 4, 3), 0.1), DataError);
  NetConfig bad = small(4, 2);
  bad.time_dim = 1;
  CHECK_THROWS_AS(VelocityNet(bad), UsageError);
}

TEST_CASE("checksum tracks parameter values") {
  std::mt19937_64 rng(7);
  VelocityNet a(small(4, 2)), b(small(4, 2));
  std::mt19937_64 r1(9), r2(9);
  a.initialize(r1);
  b.initialize(r2);
  CHECK(a.checksum() == b.checksum());
  b.params().value(0)(0, 0) += 1e-12;
  CHECK(a.checksum() != b.checksum());
}
