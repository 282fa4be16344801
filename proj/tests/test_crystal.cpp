#include <catch_amalgamated.hpp>

#include "dflow/crystal.hpp"
#include "dflow/error.hpp"

using namespace dflow;
using Catch::Approx;

namespace {

const LatticeParams kCubic3{3.0, 3.0, 3.0, 90.0, 90.0, 90.0};

Site make_site(int vocab, int order) {
  Site site;
  site.s = Eigen::VectorXd::Zero(vocab);
  site.s[0] = 1.0;
  site.positions = Eigen::MatrixX3d::Zero(order, 3);
  site.pos_weights = Eigen::VectorXd::Zero(order);
  site.pos_weights[0] = 1.0;
  return site;
}

bool has_constraint(const std::vector<Violation>& v, const std::string& name) {
  for (const auto& x : v) {
    if (x.constraint == name) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("ordered rock salt validates cleanly") {
  const int z[] = {11, 17};
  Eigen::MatrixX3d coords(2, 3);
  coords << 0, 0, 0, 0.5, 0.5, 0.5;
  const auto c = from_ordered(z, coords, LatticeParams{5.64, 5.64, 5.64, 90, 90, 90});
  CHECK(validate(c).empty());
  CHECK(c.num_sites() == 2);
  CHECK(c.order() == 2);
  CHECK(c.site(0).s[10] == 1.0);
  CHECK(c.site(1).s[16] == 1.0);
  CHECK(c.site(1).pos_weights[0] == 1.0);
  CHECK(c.site(1).positions.row(1).isZero());
  CHECK(c.is_ordered());
}

TEST_CASE("validate names the violated constraint") {
  SECTION("simplex sum") {
    std::vector<Site> sites{make_site(4, 2)};
    sites[0].s[0] = 0.9;
    const auto v = validate(DisorderedCrystal(kCubic3, sites, 4));
    REQUIRE(v.size() == 1);
    CHECK(v[0].constraint == "simplex sum");
    CHECK(v[0].site == 0);
  }
  SECTION("coordinate range is half open") {
    std::vector<Site> sites{make_site(4, 2)};
    sites[0].positions(0, 1) = 1.0;
    const auto v = validate(DisorderedCrystal(kCubic3, sites, 4));
    REQUIRE(v.size() == 1);
    CHECK(v[0].constraint == "coordinate range");
  }
  SECTION("zero-weight rows must be zero") {
    std::vector<Site> sites{make_site(4, 2)};
    sites[0].positions(1, 2) = 0.3;
    CHECK(has_constraint(validate(DisorderedCrystal(kCubic3, sites, 4)), "padding"));
  }
  SECTION("mixed orders") {
    std::vector<Site> sites{make_site(4, 2), make_site(4, 3)};
    CHECK(has_constraint(validate(DisorderedCrystal(kCubic3, sites, 4)), "shape"));
  }
  SECTION("site count limit") {
    std::vector<Site> sites(5, make_site(4, 1));
    CHECK(has_constraint(validate(DisorderedCrystal(kCubic3, sites, 4), 4), "site count"));
    CHECK(has_constraint(validate(DisorderedCrystal(kCubic3, {}, 4)), "site count"));
  }
  SECTION("angles") {
    std::vector<Site> sites{make_site(4, 1)};
    CHECK(has_constraint(validate(DisorderedCrystal({3, 3, 3, 50, 90, 90}, sites, 4)), "lattice angle"));
    CHECK(validate(DisorderedCrystal({3, 3, 3, 120, 60, 90}, sites, 4)).empty());
  }
}

TEST_CASE("create wraps coordinates and renormalizes near-simplex vectors") {
  std::vector<Site> sites{make_site(3, 2)};
  sites[0].s << 0.5, 0.5 + 5e-7, 0.0;
  sites[0].positions(0, 0) = 1.25;
  sites[0].positions(0, 1) = -0.25;
  const auto c = DisorderedCrystal::create(kCubic3, sites, 3);
  CHECK(c.site(0).s.sum() == Approx(1.0).margin(1e-15));
  CHECK(c.site(0).positions(0, 0) == Approx(0.25));
  CHECK(c.site(0).positions(0, 1) == Approx(0.75));

  sites[0].s << 0.5, 0.4, 0.0;
  CHECK_THROWS_AS(DisorderedCrystal::create(kCubic3, sites, 3), DataError);
}

TEST_CASE("create is idempotent bit for bit") {
  std::vector<Site> sites{make_site(3, 2)};
  sites[0].s << 0.1, 0.2, 0.7;
  sites[0].pos_weights << 0.3, 0.7;
  sites[0].positions << 0.1, 0.2, 0.3, 0.9, 0.99, 0.5;
  const auto a = DisorderedCrystal::create(kCubic3, sites, 3);
  const auto b = DisorderedCrystal::create(a.lattice(), a.sites(), 3);
  CHECK(a.site(0).s == b.site(0).s);
  CHECK(a.site(0).pos_weights == b.site(0).pos_weights);
  CHECK(a.site(0).positions == b.site(0).positions);
}

TEST_CASE("from_ordered rejects elements outside the vocabulary") {
  const int z[] = {101};
  Eigen::MatrixX3d coords = Eigen::MatrixX3d::Zero(1, 3);
  CHECK_THROWS_AS(from_ordered(z, coords, kCubic3), DataError);
  const int fe[] = {26};
  const auto c = from_ordered(fe, coords, kCubic3);
  CHECK(c.site(0).s[25] == 1.0);
  CHECK(c.site(0).pos_weights.isApprox(Eigen::Vector2d(1.0, 0.0)));
  CHECK(c.element_index(26) == 25);
  CHECK_THROWS_AS(c.element_index(0), DataError);
}

TEST_CASE("pad_to_order appends zero channels and refuses lossy shrinking") {
  std::vector<Site> sites{make_site(3, 2)};
  sites[0].pos_weights << 0.6, 0.4;
  sites[0].positions << 0.1, 0.1, 0.1, 0.2, 0.2, 0.2;
  const auto c = DisorderedCrystal::create(kCubic3, sites, 3);
  const auto p = pad_to_order(c, 5);
  CHECK(validate(p).empty());
  CHECK(p.order() == 5);
  CHECK(p.site(0).pos_weights[1] == 0.4);
  CHECK(p.site(0).pos_weights.tail(3).isZero());
  CHECK(p.site(0).positions.bottomRows(3).isZero());
  CHECK(pad_to_order(c, 2).site(0).positions == c.site(0).positions);
  CHECK_THROWS_AS(pad_to_order(p, 1), DataError);
  CHECK(pad_to_order(p, 2).order() == 2);
}

TEST_CASE("disorder predicates") {
  Site site = make_site(3, 2);
  CHECK_FALSE(site.is_sd());
  CHECK_FALSE(site.is_pd());
  site.s << 0.5, 0.5, 0.0;
  site.pos_weights << 0.7, 0.3;
  CHECK(site.is_sd());
  CHECK(site.is_pd());
  CHECK(site.active_positions() == 2);
}

TEST_CASE("wrap_unit maps into [0, 1)") {
  CHECK(wrap_unit(1.0) == 0.0);
  CHECK(wrap_unit(-0.25) == Approx(0.75));
  CHECK(wrap_unit(-1e-18) < 1.0);
  CHECK(wrap_unit(3.5) == Approx(0.5));
}

TEST_CASE("sample_realization is ordered and keeps the marginals") {
  std::vector<Site> sites{make_site(30, 2), make_site(30, 2)};
  sites[0].s.setZero();
  sites[0].s[25] = 0.5;  // Fe
  sites[0].s[27] = 0.5;  // Ni
  sites[1].pos_weights << 0.7, 0.3;
  sites[1].positions << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
  const auto c = DisorderedCrystal::create(kCubic3, sites, 30);
  std::mt19937_64 rng(42);
  int fe = 0, first = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto r = sample_realization(c, rng);
    REQUIRE(r.is_ordered());
    REQUIRE(validate(r).empty());
    fe += r.site(0).s[25] == 1.0;
    first += r.site(1).positions(0, 0) == 0.1;
  }
  CHECK(fe / double(draws) == Approx(0.5).margin(0.02));
  CHECK(first / double(draws) == Approx(0.7).margin(0.02));
}

TEST_CASE("realizations of an ordered crystal do not depend on the generator") {
  const int z[] = {26, 8};
  Eigen::MatrixX3d coords(2, 3);
  coords << 0, 0, 0, 0.5, 0.5, 0.5;
  const auto c = from_ordered(z, coords, kCubic3);
  std::mt19937_64 a(1), b(999);
  const auto ra = sample_realization(c, a);
  const auto rb = sample_realization(c, b);
  for (int i = 0; i < 2; ++i) {
    CHECK(ra.site(i).s == c.site(i).s);
    CHECK(rb.site(i).positions == c.site(i).positions);
  }
}

TEST_CASE("sample_categorical skips zero weights") {
  std::mt19937_64 rng(3);
  const double w[] = {0.0, 2.0, 0.0, 2.0};
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < 4000; ++i) ++counts[sample_categorical(w, rng)];
  CHECK(counts[0] == 0);
  CHECK(counts[2] == 0);
  CHECK(counts[1] / 4000.0 == Approx(0.5).margin(0.03));
}
