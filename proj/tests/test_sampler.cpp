#include <catch_amalgamated.hpp>

#include <limits>

#include "dflow/dataset.hpp"
#include "dflow/error.hpp"
#include "dflow/sampler.hpp"

using namespace dflow;
using Catch::Approx;

namespace {

VelocityField constant_field(double lattice, double coord, double weight) {
  return [=](std::span<const FlowState> states, double) {
    std::vector<VelocityBundle> out;
    for (const auto& s : states) {
      VelocityBundle v = VelocityBundle::zeros_like(s);
      v.lattice.setConstant(lattice);
      v.coords.setConstant(coord);
      v.s.setConstant(weight);
      v.s.col(0).setConstant(-weight);
      v.w.setConstant(weight);
      out.push_back(v);
    }
    return out;
  };
}

Chain random_chain(std::mt19937_64& rng, int n, int vocab, int order) {
  Chain c;
  c.state = geometry::sample_priors(n, vocab, order, rng, geometry::LengthPrior{});
  c.channel_mask = Eigen::MatrixXd::Ones(n, order);
  return c;
}

}  // namespace

TEST_CASE("chain generators are reproducible and distinct") {
  auto a = chain_rng(7, 3), b = chain_rng(7, 3), c = chain_rng(7, 4), d = chain_rng(8, 3);
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
  CHECK(x != d());
}

TEST_CASE("size sampler reproduces the observed histogram") {
  const int counts[] = {4, 4, 4, 8};
  const SizeSampler sizes(counts);
  REQUIRE(sizes.histogram().size() == 2);
  CHECK(sizes.histogram()[0] == std::pair<int, double>{4, 0.75});
  std::mt19937_64 rng(2);
  int fours = 0;
  for (int i = 0; i < 4000; ++i) {
    const int n = sizes.draw(rng);
    REQUIRE((n == 4 || n == 8));
    fours += n == 4;
  }
  CHECK(fours / 4000.0 == Approx(0.75).margin(0.03));
  CHECK_THROWS_AS(SizeSampler(std::span<const int>()), DataError);
}

TEST_CASE("a zero field leaves the state unchanged") {
  std::mt19937_64 rng(1);
  const Chain chain = random_chain(rng, 3, 6, 2);
  SamplerConfig config;
  config.steps = 20;
  const auto out = integrate({chain}, constant_field(0, 0, 0), config);
  CHECK(out[0].lattice == chain.state.lattice);
  CHECK(out[0].coords == chain.state.coords);
  CHECK((out[0].s - chain.state.s).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("constant Euclidean velocities integrate exactly") {
  std::mt19937_64 rng(2);
  const Chain chain = random_chain(rng, 2, 4, 1);
  SamplerConfig config;
  config.steps = 50;
  config.slope = 0.0;
  const auto out = integrate({chain}, constant_field(0.3, 0.0, 0.0), config);
  CHECK((out[0].lattice - chain.state.lattice).cwiseAbs().maxCoeff() == Approx(0.3));

  // With slope k the coordinate displacement is the Euler sum of (1 + k t) dt.
  config.slope = 4.0;
  config.steps = 10;
  const auto moved = integrate({chain}, constant_field(0.0, 0.01, 0.0), config);
  double expected = 0.0;
  for (int k = 0; k < 10; ++k) expected += (1.0 + 4.0 * k / 10.0) * 0.1 * 0.01;
  CHECK(geometry::wrap_displacement(moved[0].coords(0, 0) - chain.state.coords(0, 0)) ==
        Approx(expected));
}

TEST_CASE("sphere steps stay on the simplex") {
  std::mt19937_64 rng(3);
  std::vector<Chain> chains;
  for (int i = 0; i < 4; ++i) chains.push_back(random_chain(rng, 3, 10, 3));
  SamplerConfig config;
  config.steps = 100;
  const auto out = integrate(chains, constant_field(0, 0.1, 2.0), config);
  for (const auto& s : out) {
    CHECK(s.s.minCoeff() >= 0.0);
    CHECK(s.w.minCoeff() >= 0.0);
    CHECK((s.s.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK((s.w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(s.coords.minCoeff() >= 0.0);
    CHECK(s.coords.maxCoeff() < 1.0);
  }
}

TEST_CASE("fixed weights and channel masks are respected") {
  std::mt19937_64 rng(4);
  Chain chain = random_chain(rng, 2, 5, 2);
  chain.fixed_weights = true;
  chain.channel_mask(1, 1) = 0.0;
  SamplerConfig config;
  config.steps = 10;
  const auto out = integrate({chain}, constant_field(0, 0.05, 1.0), config);
  CHECK(out[0].s == chain.state.s);
  CHECK(out[0].w == chain.state.w);
  CHECK(out[0].coords.block(1, 3, 1, 3) == chain.state.coords.block(1, 3, 1, 3));
  CHECK(out[0].coords(0, 0) != chain.state.coords(0, 0));
}

TEST_CASE("chunking and threads do not change the result") {
  std::mt19937_64 rng(5);
  std::vector<Chain> chains;
  for (int i = 0; i < 7; ++i) chains.push_back(random_chain(rng, 2, 4, 2));
  SamplerConfig config;
  config.steps = 30;
  config.chunk_size = 7;
  const auto a = integrate(chains, constant_field(0.1, 0.02, 0.5), config);
  config.chunk_size = 2;
  config.threads = 3;
  const auto b = integrate(chains, constant_field(0.1, 0.02, 0.5), config);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].coords == b[i].coords);
    CHECK(a[i].s == b[i].s);
  }
}

TEST_CASE("non-finite states name the step") {
  std::mt19937_64 rng(6);
  SamplerConfig config;
  config.steps = 5;
  try {
    integrate({random_chain(rng, 2, 3, 1)},
              constant_field(std::numeric_limits<double>::quiet_NaN(), 0, 0), config);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
  config.steps = 0;
  CHECK_THROWS_AS(integrate({}, constant_field(0, 0, 0), config), UsageError);
}

TEST_CASE("finalize_state clamps the cell and reports it") {
  std::mt19937_64 rng(7);
  FlowState s = random_chain(rng, 2, 4, 1).state;
  s.lattice[0] = -1.0;
  s.lattice[3] = 50.0;  // far outside the angle range in unconstrained form
  const SampleResult r = finalize_state(s, 4);
  CHECK(r.warnings.size() == 2);
  CHECK(r.crystal.lattice().a == 1e-3);
  CHECK(r.crystal.lattice().alpha <= 120.0);
  CHECK(validate(r.crystal).empty());
}

TEST_CASE("CSP sampling keeps the composition of each condition") {
  const auto templ = data::ToyTemplate::cubic_alloy(true, 2);
  const std::vector<DisorderedCrystal> conditions{templ.crystal(), templ.crystal()};
  SamplerConfig config;
  config.steps = 10;
  config.task = Task::CSP;
  config.seed = 3;
  const auto out = sample_csp(constant_field(0.0, 0.01, 1.0), geometry::LengthPrior{}, conditions, config);
  REQUIRE(out.size() == 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(validate(out[i].crystal).empty());
    for (int k = 0; k < templ.crystal().num_sites(); ++k) {
      CHECK(out[i].crystal.site(k).s == conditions[i].site(k).s);
      CHECK(out[i].crystal.site(k).pos_weights == conditions[i].site(k).pos_weights);
    }
  }
  // Different chains start from different priors.
  CHECK(out[0].crystal.site(0).positions != out[1].crystal.site(0).positions);
  const auto again = sample_csp(constant_field(0.0, 0.01, 1.0), geometry::LengthPrior{}, conditions, config);
  CHECK(again[1].crystal.site(2).positions == out[1].crystal.site(2).positions);
}

TEST_CASE("DNG sampling produces valid crystals of the requested sizes") {
  const int counts[] = {3, 5};
  const SizeSampler sizes(counts);
  SamplerConfig config;
  config.steps = 20;
  config.seed = 1;
  const auto out = sample_batch(constant_field(0.0, 0.01, 0.5), geometry::LengthPrior{}, sizes, 6, 8, 2, config);
  REQUIRE(out.size() == 6);
  for (const auto& r : out) {
    CHECK((r.crystal.num_sites() == 3 || r.crystal.num_sites() == 5));
    CHECK(validate(r.crystal).empty());
  }
  const int n[] = {4};
  const auto single = sample_dng(constant_field(0, 0, 0), geometry::LengthPrior{}, n, 8, 2, config);
  CHECK(single.front().crystal.num_sites() == 4);
}
