#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "dflow/error.hpp"
#include "dflow/metrics.hpp"

using namespace dflow;
using namespace dflow::metrics;
using Catch::Approx;

namespace {

DisorderedCrystal ordered(std::vector<int> z, const Eigen::MatrixX3d& coords, const LatticeParams& l) {
  return from_ordered(z, coords, l);
}

DisorderedCrystal rock_salt() {
  Eigen::MatrixX3d f(8, 3);
  f << 0, 0, 0, 0.5, 0.5, 0, 0.5, 0, 0.5, 0, 0.5, 0.5,  //
      0.5, 0, 0, 0, 0.5, 0, 0, 0, 0.5, 0.5, 0.5, 0.5;
  return ordered({11, 11, 11, 11, 17, 17, 17, 17}, f, {5.64, 5.64, 5.64, 90, 90, 90});
}

}  // namespace

TEST_CASE("hungarian agrees with exhaustive search") {
  std::srand(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 6;
    const Eigen::MatrixXd cost = Eigen::MatrixXd::Random(n, n).cwiseAbs();
    const auto assignment = hungarian(cost);
    std::vector<int> seen(assignment);
    std::sort(seen.begin(), seen.end());
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    REQUIRE(seen == perm);
    double got = 0.0;
    for (int i = 0; i < n; ++i) got += cost(i, assignment[i]);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (int i = 0; i < n; ++i) c += cost(i, perm[i]);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("structure matching") {
  const auto truth = rock_salt();
  SECTION("identical structures match with zero error") {
    const auto m = structure_match(truth, truth);
    REQUIRE(m);
    CHECK(*m < 1e-12);
  }
  SECTION("site order and origin do not matter") {
    std::vector<Site> sites(truth.sites().rbegin(), truth.sites().rend());
    for (Site& s : sites) {
      s.positions(0, 0) = wrap_unit(s.positions(0, 0) + 0.137);
      s.positions(0, 2) = wrap_unit(s.positions(0, 2) - 0.41);
    }
    const auto moved = DisorderedCrystal::create(truth.lattice(), sites, truth.vocab_size());
    const auto m = structure_match(moved, truth);
    REQUIRE(m);
    CHECK(*m < 1e-9);
  }
  SECTION("small displacements give a small error") {
    std::vector<Site> sites = truth.sites();
    sites[3].positions(0, 1) = wrap_unit(sites[3].positions(0, 1) + 0.02);
    const auto m = structure_match(DisorderedCrystal::create(truth.lattice(), sites, 100), truth);
    REQUIRE(m);
    CHECK(*m > 0.0);
    CHECK(*m < 0.05);
  }
  SECTION("composition, lattice and site count are checked") {
    std::vector<Site> sites = truth.sites();
    sites[0].s.setZero();
    sites[0].s[18] = 1.0;  // K on a Na site
    sites[1].s = sites[0].s;
    sites[2].s = sites[0].s;
    CHECK_FALSE(structure_match(DisorderedCrystal::create(truth.lattice(), sites, 100), truth));
    LatticeParams big = truth.lattice();
    big.a *= 1.5;
    CHECK_FALSE(structure_match(DisorderedCrystal::create(big, truth.sites(), 100), truth));
    std::vector<Site> fewer(truth.sites().begin(), truth.sites().begin() + 7);
    CHECK_FALSE(structure_match(DisorderedCrystal::create(truth.lattice(), fewer, 100), truth));
  }
  SECTION("match rate averages over pairs") {
    const std::vector<DisorderedCrystal> preds{truth, rock_salt()};
    LatticeParams stretched = truth.lattice();
    stretched.c *= 2.0;
    const std::vector<DisorderedCrystal> truths{
        truth, DisorderedCrystal::create(stretched, truth.sites(), 100)};
    const MatchRate r = match_rate(preds, truths);
    CHECK(r.matched == 1);
    CHECK(r.rate == 0.5);
    REQUIRE(r.rmse);
    CHECK(*r.rmse < 1e-12);
  }
}

TEST_CASE("minimum interatomic distance uses periodic images") {
  Eigen::MatrixX3d f(1, 3);
  f << 0.2, 0.3, 0.4;
  CHECK(min_interatomic_distance(ordered({26}, f, {2.5, 3, 4, 90, 90, 90})) == Approx(2.5));
  Eigen::MatrixX3d g(2, 3);
  g << 0.0, 0.0, 0.0, 0.95, 0.0, 0.0;
  const auto close = ordered({26, 26}, g, {4, 4, 4, 90, 90, 90});
  CHECK(min_interatomic_distance(close) == Approx(0.2));
  CHECK_FALSE(structural_validity(close));
  CHECK(structural_validity(close, 0.1));
}

TEST_CASE("alternative positions of one site are not compared in the home cell") {
  Site site;
  site.s = Eigen::VectorXd::Zero(100);
  site.s[25] = 1.0;
  site.positions.resize(2, 3);
  site.positions << 0.0, 0.0, 0.0, 0.05, 0.0, 0.0;
  site.pos_weights = Eigen::Vector2d(0.5, 0.5);
  const auto c = DisorderedCrystal::create({4, 4, 4, 90, 90, 90}, {site}, 100);
  CHECK(min_interatomic_distance(c) == Approx(3.8));
}

TEST_CASE("density and element counts") {
  Eigen::MatrixX3d f = Eigen::MatrixX3d::Zero(1, 3);
  const auto fe = ordered({26}, f, {2, 2, 2, 90, 90, 90});
  // 55.845 u in 8 cubic Angstrom.
  CHECK(density(fe) == Approx(55.845 / 8.0 * 1.66053906660).epsilon(1e-4));
  CHECK(density(rock_salt()) == Approx(2.164).epsilon(1e-3));
  CHECK(n_el(rock_salt()) == 2);

  Site mixed;
  mixed.s = Eigen::VectorXd::Zero(100);
  mixed.s[25] = 0.25;
  mixed.s[27] = 0.75;
  mixed.positions = Eigen::MatrixX3d::Zero(1, 3);
  mixed.pos_weights = Eigen::VectorXd::Ones(1);
  const auto alloy = DisorderedCrystal::create({2, 2, 2, 90, 90, 90}, {mixed}, 100);
  CHECK(n_el(alloy) == 2);
  const auto comp = expected_composition(alloy);
  CHECK(comp.at(26) == 0.25);
  CHECK(comp.at(28) == 0.75);
}

TEST_CASE("charge neutrality") {
  CHECK(compositional_validity(rock_salt()).valid);
  Eigen::MatrixX3d f = Eigen::MatrixX3d::Zero(1, 3);
  const auto na = ordered({11}, f, {3, 3, 3, 90, 90, 90});
  const auto check = compositional_validity(na);
  CHECK_FALSE(check.valid);
  CHECK_FALSE(check.reason.empty());

  // Fe2O3 needs Fe(3+); FeO needs Fe(2+).
  Eigen::MatrixX3d g(5, 3);
  g << 0, 0, 0, 0.5, 0, 0, 0, 0.5, 0, 0, 0, 0.5, 0.5, 0.5, 0.5;
  CHECK(compositional_validity(ordered({26, 26, 8, 8, 8}, g, {5, 5, 5, 90, 90, 90})).valid);
  CHECK_FALSE(compositional_validity(ordered({26, 8, 8, 8, 8}, g, {5, 5, 5, 90, 90, 90})).valid);

  const auto table = OxidationTable::parse("# comment\n11 Na 1\n\n17 Cl -1\n");
  CHECK(compositional_validity(rock_salt(), table).valid);
  CHECK_FALSE(compositional_validity(ordered({26}, f, {3, 3, 3, 90, 90, 90}), table).valid);
  CHECK_THROWS_AS(OxidationTable::parse("5 B\n"), DataError);
}

TEST_CASE("one-dimensional Wasserstein distance") {
  const double a[] = {0.0}, b[] = {1.0};
  CHECK(wasserstein_1d(a, b) == 1.0);
  const double c[] = {0.0, 1.0}, d[] = {0.0, 2.0};
  CHECK(wasserstein_1d(c, d) == Approx(0.5));
  const double e[] = {0.0, 2.0};
  CHECK(wasserstein_1d(a, e) == Approx(1.0));
  CHECK(wasserstein_1d(e, a) == Approx(1.0));
  CHECK(wasserstein_1d(c, c) == 0.0);
  CHECK_THROWS_AS(wasserstein_1d(std::span<const double>(), a), DataError);
}

TEST_CASE("fingerprints and coverage") {
  std::mt19937_64 rng(1);
  FingerprintConfig config;
  config.realizations = 3;
  const Eigen::VectorXd salt = fingerprint(rock_salt(), rng, config);
  CHECK(salt.size() == config.bins + 100);
  CHECK(salt.tail(100).sum() == Approx(1.0));
  CHECK(salt[config.bins + 10] == Approx(0.5));

  Eigen::MatrixX3d f = Eigen::MatrixX3d::Zero(1, 3);
  const Eigen::VectorXd iron = fingerprint(ordered({26}, f, {2.5, 2.5, 2.5, 90, 90, 90}), rng, config);
  const std::vector<Eigen::VectorXd> ref{salt, iron};
  const CoverageThresholds t{1e-9, 1e-9};
  const Coverage full = coverage(ref, ref, t, config.bins);
  CHECK(full.recall == 1.0);
  CHECK(full.precision == 1.0);
  const std::vector<Eigen::VectorXd> half{salt};
  const Coverage partial = coverage(half, ref, t, config.bins);
  CHECK(partial.recall == 0.5);
  CHECK(partial.precision == 1.0);

  const CoverageThresholds calibrated = calibrate_coverage(ref, config.bins);
  CHECK(calibrated.structure > 0.0);
  CHECK(calibrated.composition == Approx(std::sqrt(1.5)));
}
