#include <catch_amalgamated.hpp>

#include "dflow/dataset.hpp"
#include "dflow/error.hpp"
#include "dflow/training.hpp"

using namespace dflow;
using Catch::Approx;

namespace {

DisorderedCrystal pd_crystal() {
  return data::ToyTemplate::cubic_alloy(true, 2).crystal();
}

FlowState prior_for(const DisorderedCrystal& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return geometry::sample_priors(c.num_sites(), c.vocab_size(), c.order(), rng, geometry::LengthPrior{});
}

NetConfig small_config(int vocab, int order) {
  NetConfig config;
  config.vocab_size = vocab;
  config.order = order;
  config.hidden_dim = 16;
  config.num_layers = 2;
  config.n_freq = 4;
  config.time_dim = 8;
  config.max_sites = 8;
  return config;
}

}  // namespace

TEST_CASE("task names") {
  CHECK(parse_task("csp") == Task::CSP);
  CHECK(parse_task("DNG") == Task::DNG);
  CHECK(to_string(Task::CSP) == "csp");
  CHECK_THROWS_AS(parse_task("both"), UsageError);
}

TEST_CASE("loss weights") {
  const LossWeights csp = LossWeights::defaults(Task::CSP);
  CHECK(csp.s == 0.0);
  CHECK(csp.w == 0.0);
  const LossWeights n = LossWeights::defaults(Task::DNG).normalized();
  CHECK(n.lattice + n.coords + n.coords_extra + n.s + n.w == Approx(1.0));
  CHECK(n.s / n.lattice == Approx(2000.0));
  CHECK_THROWS_AS((LossWeights{0, 0, 0, 0, 0}.normalized()), UsageError);
}

TEST_CASE("training pairs follow the conditional paths") {
  const DisorderedCrystal c = pd_crystal();
  const FlowState prior = prior_for(c, 3);
  const FlowState data = geometry::state_from_crystal(c);

  const TrainingPair start = make_training_pair(c, prior, 0.0, Task::DNG);
  CHECK(start.state.lattice == prior.lattice);
  CHECK((start.state.s - prior.s).cwiseAbs().maxCoeff() == 0.0);
  CHECK((start.state.coords - prior.coords).cwiseAbs().maxCoeff() < 1e-15);

  const TrainingPair end = make_training_pair(c, prior, 1.0, Task::DNG);
  CHECK((end.state.lattice - data.lattice).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((end.state.s - data.s).cwiseAbs().maxCoeff() == 0.0);
  CHECK((end.state.w - data.w).cwiseAbs().maxCoeff() == 0.0);

  // At t = 1 the active coordinates equal the data up to one common translation.
  Eigen::RowVector3d offset;
  for (int k = 0; k < 3; ++k) offset[k] = geometry::wrap_displacement(end.state.coords(0, k) - data.coords(0, k));
  for (int i = 0; i < c.num_sites(); ++i) {
    for (int l = 0; l < c.order(); ++l) {
      if (end.channel_mask(i, l) == 0.0) continue;
      for (int k = 0; k < 3; ++k) {
        const double d = geometry::wrap_displacement(end.state.coords(i, 3 * l + k) - data.coords(i, 3 * l + k));
        CHECK(std::abs(geometry::wrap_displacement(d - offset[k])) < 1e-12);
      }
    }
  }

  const TrainingPair mid = make_training_pair(c, prior, 0.4, Task::DNG);
  CHECK(mid.lattice_target == data.lattice - prior.lattice);
  // Channel mask: channel 0 everywhere, channel 1 only on the split Cu site.
  CHECK(mid.channel_mask.col(0).minCoeff() == 1.0);
  CHECK(mid.channel_mask.col(1).sum() == 1.0);
  Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
  for (int i = 0; i < c.num_sites(); ++i) {
    for (int l = 0; l < c.order(); ++l) sum += mid.coords_target.block(i, 3 * l, 1, 3);
  }
  CHECK(sum.cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 0; i < c.num_sites(); ++i) {
    const Eigen::VectorXd x0 = prior.s.row(i).transpose().cwiseSqrt();
    const Eigen::VectorXd v = mid.s_target.row(i).transpose();
    CHECK(std::abs(v.dot(x0)) < 1e-12);
    const Eigen::VectorXd reached = geometry::sphere_exp(x0, v);
    CHECK((reached.cwiseAbs2() - data.s.row(i).transpose()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(mid.state.s.row(i).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("CSP pairs keep the data weights") {
  const DisorderedCrystal c = pd_crystal();
  const TrainingPair p = make_training_pair(c, prior_for(c, 5), 0.3, Task::CSP);
  const FlowState data = geometry::state_from_crystal(c);
  CHECK(p.state.s == data.s);
  CHECK(p.state.w == data.w);
  CHECK(p.s_target.isZero());
  CHECK(p.w_target.isZero());
  std::mt19937_64 rng(1);
  const FlowState wrong = geometry::sample_priors(3, c.vocab_size(), 2, rng, geometry::LengthPrior{});
  CHECK_THROWS_AS(make_training_pair(c, wrong, 0.3, Task::CSP), UsageError);
}

TEST_CASE("loss of the exact targets is zero and zero velocities give the target energy") {
  const DisorderedCrystal c = pd_crystal();
  std::vector<TrainingPair> pairs{make_training_pair(c, prior_for(c, 1), 0.2, Task::DNG),
                                  make_training_pair(c, prior_for(c, 2), 0.7, Task::DNG)};
  std::vector<VelocityBundle> exact, zero;
  for (const auto& p : pairs) {
    VelocityBundle v;
    v.lattice = p.lattice_target;
    v.coords = p.coords_target;
    v.s = p.s_target;
    v.w = p.w_target;
    exact.push_back(v);
    zero.push_back(VelocityBundle::zeros_like(p.state));
  }
  const LossWeights weights;
  CHECK(compute_loss(pairs, exact, weights).total == 0.0);

  const LossBreakdown l = compute_loss(pairs, zero, weights);
  double lattice = 0.0, coords = 0.0;
  for (const auto& p : pairs) {
    lattice += p.lattice_target.squaredNorm() / 6.0 / 2.0;
    coords += p.coords_target.leftCols(3).squaredNorm() / (3.0 * p.state.num_sites()) / 2.0;
  }
  CHECK(l.lattice == Approx(lattice));
  CHECK(l.coords == Approx(coords));
  const LossWeights n = weights.normalized();
  CHECK(l.total == Approx(n.lattice * l.lattice + n.coords * l.coords + n.coords_extra * l.coords_extra +
                          n.s * l.s + n.w * l.w));
}

TEST_CASE("batched gradients match the tape-free loss and do not depend on threads") {
  const DisorderedCrystal c = pd_crystal();
  VelocityNet net(small_config(c.vocab_size(), 2));
  std::mt19937_64 rng(11);
  net.randomize(rng);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < 5; ++i) {
    pairs.push_back(make_training_pair(c, rng, Task::DNG, geometry::LengthPrior{}));
  }
  std::vector<FlowState> states;
  std::vector<double> times;
  for (const auto& p : pairs) {
    states.push_back(p.state);
    times.push_back(p.t);
  }
  const auto velocities = net.evaluate(states, times);
  const LossWeights weights;
  const double reference = compute_loss(pairs, velocities, weights).total;

  const LossAndGradients one = loss_and_gradients(net, pairs, weights, 2, 1);
  const LossAndGradients three = loss_and_gradients(net, pairs, weights, 2, 3);
  const LossAndGradients whole = loss_and_gradients(net, pairs, weights, 16, 1);
  CHECK(one.loss.total == Approx(reference).epsilon(1e-12));
  CHECK(whole.loss.total == Approx(reference).epsilon(1e-12));
  CHECK(one.loss.total == three.loss.total);
  for (std::size_t p = 0; p < one.gradients.size(); ++p) {
    CHECK(one.gradients[p] == three.gradients[p]);
    CHECK((one.gradients[p] - whole.gradients[p]).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("training reduces the loss on a tiny dataset") {
  const auto templ = data::ToyTemplate::cubic_alloy(false, 2);
  std::mt19937_64 rng(4);
  const auto dataset = data::make_toy_dataset(templ, 8, 0.0, rng);
  const auto crystals = dataset.crystals();
  VelocityNet net(small_config(templ.vocab_size, 2));
  net.initialize(rng);
  TrainingConfig config = TrainingConfig::for_task(Task::CSP);
  config.epochs = 120;
  config.batch_size = 8;
  config.learning_rate = 3e-3;
  config.seed = 9;
  const auto lattice_prior = geometry::LengthPrior::fit(
      std::vector<LatticeParams>{crystals.front().lattice()});
  // A fixed batch of pairs scores the model before and after training.
  std::mt19937_64 probe_rng(21);
  std::vector<TrainingPair> probe;
  for (int i = 0; i < 32; ++i) {
    probe.push_back(make_training_pair(crystals[static_cast<std::size_t>(i % 8)], probe_rng, Task::CSP,
                                       lattice_prior));
  }
  const LossBreakdown before = loss_and_gradients(net, probe, config.weights).loss;
  int calls = 0;
  const TrainingResult r = train(net, crystals, config, lattice_prior, [&](int, double) { ++calls; });
  CHECK(calls == 120);
  CHECK(r.loss_history.size() == 120);
  const LossBreakdown after = loss_and_gradients(net, probe, config.weights).loss;
  CHECK(after.total < 0.8 * before.total);
  for (double l : r.loss_history) CHECK(std::isfinite(l));

  // Same seed and starting point, same parameters.
  VelocityNet again(small_config(templ.vocab_size, 2));
  std::mt19937_64 init(4);
  data::make_toy_dataset(templ, 8, 0.0, init);
  again.initialize(init);
  train(again, crystals, config, lattice_prior);
  CHECK(again.checksum() == net.checksum());
}

TEST_CASE("training argument checks") {
  const auto templ = data::ToyTemplate::cubic_alloy(false, 2);
  const std::vector<DisorderedCrystal> data{templ.crystal()};
  VelocityNet net(small_config(templ.vocab_size, 2));
  TrainingConfig config = TrainingConfig::for_task(Task::CSP);
  config.weights.s = 1.0;
  CHECK_THROWS_AS(train(net, data, config, geometry::LengthPrior{}), UsageError);
  config = TrainingConfig::for_task(Task::DNG);
  CHECK_THROWS_AS(train(net, std::span<const DisorderedCrystal>(), config, geometry::LengthPrior{}),
                  DataError);
  VelocityNet narrow(small_config(templ.vocab_size + 1, 2));
  CHECK_THROWS_AS(train(narrow, data, config, geometry::LengthPrior{}), DataError);
}
