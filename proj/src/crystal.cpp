#include "dflow/crystal.hpp"

#include <cmath>
#include <sstream>

#include "dflow/error.hpp"

namespace dflow {
namespace {

constexpr double kSumTolerance = 1e-8;
constexpr double kRenormalizeTolerance = 1e-6;

bool all_finite(const Site& site) {
  return site.s.allFinite() && site.positions.allFinite() &&
         site.pos_weights.allFinite();
}

// Renormalizes a probability vector that is already close to the simplex.
// Returns false when it is too far off to be repaired.
bool canonicalize_probabilities(Eigen::VectorXd& p) {
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p[k] < 0.0 && p[k] >= -1e-12) p[k] = 0.0;
  }
  const double total = p.sum();
  if (std::abs(total - 1.0) > kRenormalizeTolerance) return false;
  // Leave vectors that are normalized up to rounding untouched so that
  // canonicalization is idempotent bit for bit.
  if (std::abs(total - 1.0) > 1e-14) p /= total;
  return true;
}

}  // namespace

int Site::active_positions() const {
  int n = 0;
  for (Eigen::Index l = 0; l < pos_weights.size(); ++l) n += pos_weights[l] > 0.0;
  return n;
}

bool Site::is_sd() const {
  int n = 0;
  for (Eigen::Index k = 0; k < s.size(); ++k) n += s[k] > 0.0;
  return n >= 2;
}

double wrap_unit(double x) {
  double r = x - std::floor(x);
  // x slightly below an integer can round up to exactly 1.
  if (r >= 1.0) r = 0.0;
  return r;
}

DisorderedCrystal::DisorderedCrystal(LatticeParams lattice, std::vector<Site> sites,
                                     int vocab_size)
    : lattice_(lattice), sites_(std::move(sites)), vocab_size_(vocab_size) {}

DisorderedCrystal DisorderedCrystal::create(LatticeParams lattice,
                                            std::vector<Site> sites,
                                            int vocab_size, int max_sites) {
  for (std::size_t i = 0; i < sites.size(); ++i) {
    Site& site = sites[i];
    if (!all_finite(site)) continue;  // reported by validate below
    if (!canonicalize_probabilities(site.s)) {
      throw DataError("site " + std::to_string(i) +
                      ": element probabilities do not sum to 1");
    }
    if (!canonicalize_probabilities(site.pos_weights)) {
      throw DataError("site " + std::to_string(i) +
                      ": position weights do not sum to 1");
    }
    for (Eigen::Index l = 0; l < site.positions.rows(); ++l) {
      if (l < site.pos_weights.size() && site.pos_weights[l] == 0.0) {
        site.positions.row(l).setZero();
        continue;
      }
      for (int ax = 0; ax < 3; ++ax) site.positions(l, ax) = wrap_unit(site.positions(l, ax));
    }
  }
  DisorderedCrystal crystal(lattice, std::move(sites), vocab_size);
  const auto violations = validate(crystal, max_sites);
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "invalid crystal:";
    for (const auto& v : violations) {
      msg << " [site " << v.site << ": " << v.constraint << " (" << v.detail << ")]";
    }
    throw DataError(msg.str());
  }
  return crystal;
}

int DisorderedCrystal::element_index(int z) const {
  if (z < 1 || z > vocab_size_) {
    throw DataError("element with atomic number " + std::to_string(z) +
                    " is outside the vocabulary of size " +
                    std::to_string(vocab_size_));
  }
  return z - 1;
}

bool DisorderedCrystal::is_ordered() const {
  for (const auto& site : sites_) {
    if (site.is_sd() || site.is_pd()) return false;
  }
  return true;
}

std::vector<Violation> validate(const DisorderedCrystal& crystal, int max_sites) {
  std::vector<Violation> out;
  const auto& lat = crystal.lattice();
  if (!(lat.a > 0.0 && lat.b > 0.0 && lat.c > 0.0)) {
    out.push_back({-1, "lattice length", "cell lengths must be positive"});
  }
  for (double angle : {lat.alpha, lat.beta, lat.gamma}) {
    if (!(angle >= 60.0 && angle <= 120.0)) {
      out.push_back({-1, "lattice angle",
                     "angle " + std::to_string(angle) + " outside [60, 120]"});
      break;
    }
  }
  const int n = crystal.num_sites();
  if (n < 1 || n > max_sites) {
    out.push_back({-1, "site count",
                   std::to_string(n) + " sites, allowed 1.." + std::to_string(max_sites)});
  }
  const int order = crystal.order();
  for (int i = 0; i < n; ++i) {
    const Site& site = crystal.site(i);
    if (site.s.size() != crystal.vocab_size() || site.order() != order ||
        site.positions.rows() != site.order() || order < 1) {
      out.push_back({i, "shape", "inconsistent vocabulary size or positional order"});
      continue;
    }
    if (!all_finite(site)) {
      out.push_back({i, "non-finite", "NaN or infinite entry"});
      continue;
    }
    if (site.s.minCoeff() < 0.0) {
      out.push_back({i, "negative probability", "element probability below 0"});
    }
    if (std::abs(site.s.sum() - 1.0) > kSumTolerance) {
      out.push_back({i, "simplex sum", "element probabilities sum to " +
                                           std::to_string(site.s.sum())});
    }
    if (site.pos_weights.minCoeff() < 0.0) {
      out.push_back({i, "negative weight", "position weight below 0"});
    }
    if (std::abs(site.pos_weights.sum() - 1.0) > kSumTolerance) {
      out.push_back({i, "weight sum", "position weights sum to " +
                                          std::to_string(site.pos_weights.sum())});
    }
    bool in_range = true;
    bool padded = true;
    for (int l = 0; l < order; ++l) {
      for (int ax = 0; ax < 3; ++ax) {
        const double x = site.positions(l, ax);
        in_range = in_range && x >= 0.0 && x < 1.0;
        if (site.pos_weights[l] == 0.0 && x != 0.0) padded = false;
      }
    }
    if (!in_range) {
      out.push_back({i, "coordinate range", "fractional coordinate outside [0, 1)"});
    }
    if (!padded) {
      out.push_back({i, "padding", "position with zero weight is not a zero row"});
    }
  }
  return out;
}

DisorderedCrystal from_ordered(std::span<const int> atomic_numbers,
                               const Eigen::MatrixX3d& coords,
                               const LatticeParams& lattice, int vocab_size,
                               int order) {
  if (static_cast<Eigen::Index>(atomic_numbers.size()) != coords.rows()) {
    throw DataError("from_ordered: element count does not match coordinate rows");
  }
  if (order < 1) throw DataError("from_ordered: order must be at least 1");
  std::vector<Site> sites;
  sites.reserve(atomic_numbers.size());
  for (std::size_t i = 0; i < atomic_numbers.size(); ++i) {
    const int z = atomic_numbers[i];
    if (z < 1 || z > vocab_size) {
      throw DataError("from_ordered: atomic number " + std::to_string(z) +
                      " outside vocabulary of size " + std::to_string(vocab_size));
    }
    Site site;
    site.s = Eigen::VectorXd::Zero(vocab_size);
    site.s[z - 1] = 1.0;
    site.positions = Eigen::MatrixX3d::Zero(order, 3);
    site.positions.row(0) = coords.row(static_cast<Eigen::Index>(i));
    site.pos_weights = Eigen::VectorXd::Zero(order);
    site.pos_weights[0] = 1.0;
    sites.push_back(std::move(site));
  }
  return DisorderedCrystal::create(lattice, std::move(sites), vocab_size);
}

DisorderedCrystal pad_to_order(const DisorderedCrystal& crystal, int new_order) {
  if (new_order < 1) throw DataError("pad_to_order: order must be at least 1");
  std::vector<Site> sites = crystal.sites();
  for (std::size_t i = 0; i < sites.size(); ++i) {
    Site& site = sites[i];
    const int old_order = site.order();
    if (new_order < old_order) {
      for (int l = new_order; l < old_order; ++l) {
        if (site.pos_weights[l] != 0.0) {
          throw DataError("pad_to_order: site " + std::to_string(i) +
                          " carries weight on channel " + std::to_string(l));
        }
      }
    }
    Eigen::MatrixX3d positions = Eigen::MatrixX3d::Zero(new_order, 3);
    Eigen::VectorXd weights = Eigen::VectorXd::Zero(new_order);
    const int keep = std::min(old_order, new_order);
    positions.topRows(keep) = site.positions.topRows(keep);
    weights.head(keep) = site.pos_weights.head(keep);
    site.positions = std::move(positions);
    site.pos_weights = std::move(weights);
  }
  return DisorderedCrystal(crystal.lattice(), std::move(sites), crystal.vocab_size());
}

int sample_categorical(std::span<const double> weights, std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    last_positive = static_cast<int>(k);
    acc += weights[k];
    if (u < acc) return static_cast<int>(k);
  }
  return last_positive;
}

DisorderedCrystal sample_realization(const DisorderedCrystal& crystal,
                                     std::mt19937_64& rng) {
  std::vector<Site> sites;
  sites.reserve(crystal.sites().size());
  for (const Site& in : crystal.sites()) {
    const int element = sample_categorical({in.s.data(), static_cast<std::size_t>(in.s.size())}, rng);
    const int channel = sample_categorical(
        {in.pos_weights.data(), static_cast<std::size_t>(in.pos_weights.size())}, rng);
    Site out;
    out.s = Eigen::VectorXd::Zero(in.s.size());
    out.s[element] = 1.0;
    out.positions = Eigen::MatrixX3d::Zero(in.order(), 3);
    out.positions.row(0) = in.positions.row(channel);
    out.pos_weights = Eigen::VectorXd::Zero(in.order());
    out.pos_weights[0] = 1.0;
    sites.push_back(std::move(out));
  }
  return DisorderedCrystal(crystal.lattice(), std::move(sites), crystal.vocab_size());
}

}  // namespace dflow
