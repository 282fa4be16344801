#include "dflow/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dflow/discretize.hpp"
#include "dflow/elements.hpp"
#include "dflow/error.hpp"
#include "dflow/geometry.hpp"
#include "dflow/parallel.hpp"

namespace dflow::metrics {

extern const std::string_view kBuiltinOxidationTable;

namespace {

constexpr double kAmuPerCubicAngstromToGramsPerCc = 1.66053906660;
constexpr double kCompositionTolerance = 0.05;
constexpr double kSpeciesTolerance = 0.1;
constexpr double kForbidden = 1e12;

Eigen::Vector3d wrap_vec(const Eigen::Vector3d& d) {
  return d.unaryExpr([](double x) { return geometry::wrap_displacement(x); });
}

// Shortest Cartesian length among the 27 images around the wrapped displacement.
double min_image_distance(const Eigen::Matrix3d& lattice, const Eigen::Vector3d& frac) {
  const Eigen::Vector3d d0 = wrap_vec(frac);
  double best = std::numeric_limits<double>::infinity();
  for (int x = -1; x <= 1; ++x) {
    for (int y = -1; y <= 1; ++y) {
      for (int z = -1; z <= 1; ++z) {
        best = std::min(best, (lattice * (d0 + Eigen::Vector3d(x, y, z))).norm());
      }
    }
  }
  return best;
}

// Position with the largest weight (lowest channel on ties).
Eigen::Vector3d representative(const Site& site) {
  return site.positions.row(discretize::argmax(site.pos_weights)).transpose();
}

std::map<int, double> fractions(const DisorderedCrystal& crystal) {
  std::map<int, double> comp = expected_composition(crystal);
  double total = 0.0;
  for (const auto& [z, n] : comp) total += n;
  if (total > 0.0) {
    for (auto& [z, n] : comp) n /= total;
  }
  return comp;
}

bool composition_agrees(const DisorderedCrystal& a, const DisorderedCrystal& b) {
  const auto fa = fractions(a);
  const auto fb = fractions(b);
  for (const auto& [z, x] : fa) {
    const auto it = fb.find(z);
    if (std::abs(x - (it == fb.end() ? 0.0 : it->second)) > kCompositionTolerance) return false;
  }
  for (const auto& [z, x] : fb) {
    if (!fa.contains(z) && x > kCompositionTolerance) return false;
  }
  return true;
}

bool lattice_agrees(const LatticeParams& p, const LatticeParams& t, const MatchTolerances& tol) {
  std::array<double, 3> lp{p.a, p.b, p.c}, lt{t.a, t.b, t.c};
  std::array<double, 3> ap{p.alpha, p.beta, p.gamma}, at{t.alpha, t.beta, t.gamma};
  std::sort(lp.begin(), lp.end());
  std::sort(lt.begin(), lt.end());
  std::sort(ap.begin(), ap.end());
  std::sort(at.begin(), at.end());
  for (int k = 0; k < 3; ++k) {
    if (std::abs(lp[k] - lt[k]) > tol.ltol * lt[k]) return false;
    if (std::abs(ap[k] - at[k]) > tol.angle_tol) return false;
  }
  return true;
}

std::vector<Eigen::Vector3d> image_range(const Eigen::Matrix3d& lattice, double cutoff) {
  const Eigen::Matrix3d inv = lattice.inverse();
  std::array<int, 3> reach{};
  for (int k = 0; k < 3; ++k) {
    reach[k] = static_cast<int>(std::ceil(cutoff * inv.row(k).norm())) + 1;
  }
  std::vector<Eigen::Vector3d> images;
  for (int x = -reach[0]; x <= reach[0]; ++x) {
    for (int y = -reach[1]; y <= reach[1]; ++y) {
      for (int z = -reach[2]; z <= reach[2]; ++z) images.emplace_back(x, y, z);
    }
  }
  return images;
}

// Histogram and element-fraction block of one ordered structure.
Eigen::VectorXd ordered_fingerprint(const DisorderedCrystal& crystal,
                                    const FingerprintConfig& config) {
  const int n = crystal.num_sites();
  Eigen::VectorXd fp = Eigen::VectorXd::Zero(config.bins + crystal.vocab_size());
  const Eigen::Matrix3d lattice = geometry::lattice_matrix(crystal.lattice());
  const std::vector<Eigen::Vector3d> images = image_range(lattice, config.cutoff + 3.0 * config.sigma);
  const double width = config.cutoff / config.bins;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d fi = crystal.site(i).positions.row(0).transpose();
    for (int j = 0; j < n; ++j) {
      const Eigen::Vector3d base =
          wrap_vec(crystal.site(j).positions.row(0).transpose() - fi);
      for (const auto& img : images) {
        if (i == j && img.isZero()) continue;
        const double d = (lattice * (base + img)).norm();
        if (d > config.cutoff + 3.0 * config.sigma) continue;
        for (int b = 0; b < config.bins; ++b) {
          const double r = (b + 0.5) * width;
          fp[b] += std::exp(-0.5 * std::pow((d - r) / config.sigma, 2));
        }
      }
    }
    fp[config.bins + discretize::argmax(crystal.site(i).s)] += 1.0;
  }
  return fp / static_cast<double>(n);
}

std::pair<double, double> block_distances(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                          int bins) {
  const double structural = (a.head(bins) - b.head(bins)).norm();
  const double compositional = (a.tail(a.size() - bins) - b.tail(b.size() - bins)).norm();
  return {structural, compositional};
}

}  // namespace

// ---- structure matching -----------------------------------------------------

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw UsageError("hungarian: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials and matching with 1-based indices; column 0 is a sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) assignment[match[j] - 1] = j - 1;
  return assignment;
}

std::optional<double> structure_match(const DisorderedCrystal& pred,
                                      const DisorderedCrystal& truth,
                                      const MatchTolerances& tol) {
  const int n = truth.num_sites();
  if (pred.num_sites() != n || n == 0) return std::nullopt;
  if (pred.vocab_size() != truth.vocab_size()) return std::nullopt;
  if (!composition_agrees(pred, truth)) return std::nullopt;
  if (!lattice_agrees(pred.lattice(), truth.lattice(), tol)) return std::nullopt;

  Eigen::Matrix3d lattice;
  double scale = 0.0;
  try {
    lattice = 0.5 * (geometry::lattice_matrix(pred.lattice()) +
                     geometry::lattice_matrix(truth.lattice()));
    scale = std::cbrt(geometry::cell_volume(truth.lattice()) / n);
  } catch (const NumericalError&) {
    return std::nullopt;
  }
  const double threshold = tol.stol * scale;

  std::vector<Eigen::Vector3d> fp(n), ft(n);
  Eigen::MatrixXi compatible(n, n);
  for (int i = 0; i < n; ++i) {
    fp[i] = representative(pred.site(i));
    ft[i] = representative(truth.site(i));
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double tv = 0.5 * (pred.site(i).s - truth.site(j).s).cwiseAbs().sum();
      compatible(i, j) = tv <= kSpeciesTolerance;
    }
  }

  std::optional<double> best;
  Eigen::MatrixXd cost(n, n);
  for (int anchor = 0; anchor < n; ++anchor) {
    if (!compatible(0, anchor)) continue;
    Eigen::Vector3d shift = ft[anchor] - fp[0];
    std::vector<int> assignment;
    bool feasible = true;
    for (int pass = 0; pass < 2 && feasible; ++pass) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          cost(i, j) = compatible(i, j)
                           ? std::pow(min_image_distance(lattice, ft[j] - fp[i] - shift), 2)
                           : kForbidden;
        }
      }
      assignment = hungarian(cost);
      for (int i = 0; i < n; ++i) feasible = feasible && cost(i, assignment[i]) < kForbidden;
      if (pass == 0 && feasible) {
        // Re-center on the mean residual of the first assignment.
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (int i = 0; i < n; ++i) mean += wrap_vec(ft[assignment[i]] - fp[i] - shift);
        shift += mean / n;
      }
    }
    if (!feasible) continue;
    double sq = 0.0;
    bool within = true;
    for (int i = 0; i < n; ++i) {
      const double d = min_image_distance(lattice, ft[assignment[i]] - fp[i] - shift);
      within = within && d < threshold;
      sq += d * d;
    }
    if (!within) continue;
    const double rmse = std::sqrt(sq / n) / scale;
    if (!best || rmse < *best) best = rmse;
  }
  return best;
}

MatchRate match_rate(std::span<const DisorderedCrystal> preds,
                     std::span<const DisorderedCrystal> truths, const MatchTolerances& tol,
                     int threads) {
  if (preds.size() != truths.size()) throw UsageError("match_rate: list lengths differ");
  MatchRate result;
  if (preds.empty()) return result;
  std::vector<std::optional<double>> matches(preds.size());
  parallel_for(static_cast<int>(preds.size()), threads, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    matches[k] = structure_match(preds[k], truths[k], tol);
  });
  double sum = 0.0;
  for (const auto& m : matches) {
    if (!m) continue;
    ++result.matched;
    sum += *m;
  }
  result.rate = static_cast<double>(result.matched) / static_cast<double>(preds.size());
  if (result.matched > 0) result.rmse = sum / result.matched;
  return result;
}

// ---- validity ---------------------------------------------------------------

double min_interatomic_distance(const DisorderedCrystal& crystal) {
  const Eigen::Matrix3d lattice = geometry::lattice_matrix(crystal.lattice());
  struct Occupied {
    int site;
    Eigen::Vector3d f;
  };
  std::vector<Occupied> occupied;
  for (int i = 0; i < crystal.num_sites(); ++i) {
    const Site& site = crystal.site(i);
    for (int l = 0; l < site.order(); ++l) {
      if (site.pos_weights[l] > 0.0) occupied.push_back({i, site.positions.row(l).transpose()});
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < occupied.size(); ++p) {
    for (std::size_t q = p; q < occupied.size(); ++q) {
      const Eigen::Vector3d d0 = wrap_vec(occupied[q].f - occupied[p].f);
      const bool same_site = occupied[p].site == occupied[q].site;
      for (int x = -1; x <= 1; ++x) {
        for (int y = -1; y <= 1; ++y) {
          for (int z = -1; z <= 1; ++z) {
            // The home-cell pair of a site with itself or with its own
            // alternative positions is never co-occupied.
            if (same_site && x == 0 && y == 0 && z == 0) continue;
            best = std::min(best, (lattice * (d0 + Eigen::Vector3d(x, y, z))).norm());
          }
        }
      }
    }
  }
  return best;
}

bool structural_validity(const DisorderedCrystal& crystal, double d_min) {
  try {
    return min_interatomic_distance(crystal) >= d_min;
  } catch (const NumericalError&) {
    return false;
  }
}

OxidationTable OxidationTable::parse(std::string_view text) {
  OxidationTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    int z = 0;
    std::string symbol;
    if (!(fields >> z)) continue;
    if (!(fields >> symbol)) {
      throw DataError("oxidation table line " + std::to_string(line_no) + ": missing symbol");
    }
    std::vector<int> states;
    int q = 0;
    while (fields >> q) states.push_back(q);
    if (states.empty()) {
      throw DataError("oxidation table line " + std::to_string(line_no) + ": no states");
    }
    table.states_[z] = std::move(states);
  }
  return table;
}

const OxidationTable& OxidationTable::builtin() {
  static const OxidationTable table = parse(kBuiltinOxidationTable);
  return table;
}

const std::vector<int>* OxidationTable::states(int z) const {
  const auto it = states_.find(z);
  return it == states_.end() ? nullptr : &it->second;
}

std::map<int, double> expected_composition(const DisorderedCrystal& crystal) {
  std::map<int, double> comp;
  for (const Site& site : crystal.sites()) {
    const double occupancy = site.pos_weights.sum();
    for (Eigen::Index k = 0; k < site.s.size(); ++k) {
      if (site.s[k] > 0.0) {
        comp[DisorderedCrystal::atomic_number(static_cast<int>(k))] += occupancy * site.s[k];
      }
    }
  }
  return comp;
}

CompositionCheck compositional_validity(const DisorderedCrystal& crystal,
                                        const OxidationTable& table) {
  std::vector<double> sums{0.0};
  for (const auto& [z, amount] : expected_composition(crystal)) {
    if (amount <= 1e-12) continue;
    const std::vector<int>* states = table.states(z);
    if (!states) {
      return {false, "no oxidation states for " + std::string(elements::symbol(z))};
    }
    std::vector<double> next;
    next.reserve(sums.size() * states->size());
    for (double s : sums) {
      for (int q : *states) next.push_back(s + amount * q);
    }
    std::sort(next.begin(), next.end());
    sums.clear();
    for (double x : next) {
      if (sums.empty() || x - sums.back() > 1e-9) sums.push_back(x);
    }
  }
  for (double s : sums) {
    if (std::abs(s) <= 1e-6) return {true, ""};
  }
  return {false, "no charge-neutral oxidation state assignment"};
}

// ---- properties -------------------------------------------------------------

double density(const DisorderedCrystal& crystal) {
  double mass = 0.0;
  for (const auto& [z, amount] : expected_composition(crystal)) {
    mass += amount * elements::atomic_mass(z);
  }
  return mass / geometry::cell_volume(crystal.lattice()) * kAmuPerCubicAngstromToGramsPerCc;
}

int n_el(const DisorderedCrystal& crystal) {
  std::vector<bool> present(static_cast<std::size_t>(crystal.vocab_size()), false);
  for (const Site& site : crystal.sites()) {
    for (Eigen::Index k = 0; k < site.s.size(); ++k) {
      if (site.s[k] > 0.0) present[static_cast<std::size_t>(k)] = true;
    }
  }
  return static_cast<int>(std::count(present.begin(), present.end(), true));
}

double wasserstein_1d(std::span<const double> xs, std::span<const double> ys) {
  if (xs.empty() || ys.empty()) throw DataError("wasserstein_1d: empty sample");
  std::vector<double> a(xs.begin(), xs.end()), b(ys.begin(), ys.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> grid(a);
  grid.insert(grid.end(), b.begin(), b.end());
  std::sort(grid.begin(), grid.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t ia = 0, ib = 0;
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    while (ia < a.size() && a[ia] <= grid[k]) ++ia;
    while (ib < b.size() && b[ib] <= grid[k]) ++ib;
    total += std::abs(ia / na - ib / nb) * (grid[k + 1] - grid[k]);
  }
  return total;
}

// ---- fingerprints and coverage ---------------------------------------------

Eigen::VectorXd fingerprint(const DisorderedCrystal& crystal, std::mt19937_64& rng,
                            const FingerprintConfig& config) {
  if (config.realizations < 1 || config.bins < 1) {
    throw UsageError("fingerprint: realizations and bins must be positive");
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(config.bins + crystal.vocab_size());
  for (int r = 0; r < config.realizations; ++r) {
    sum += ordered_fingerprint(sample_realization(crystal, rng), config);
  }
  return sum / config.realizations;
}

CoverageThresholds calibrate_coverage(std::span<const Eigen::VectorXd> reference, int bins,
                                      double q) {
  CoverageThresholds t;
  if (reference.size() < 2) return t;
  Eigen::VectorXd nn_struct(static_cast<Eigen::Index>(reference.size()));
  Eigen::VectorXd nn_comp(static_cast<Eigen::Index>(reference.size()));
  for (std::size_t i = 0; i < reference.size(); ++i) {
    double bs = std::numeric_limits<double>::infinity(), bc = bs;
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (i == j) continue;
      const auto [ds, dc] = block_distances(reference[i], reference[j], bins);
      bs = std::min(bs, ds);
      bc = std::min(bc, dc);
    }
    nn_struct[static_cast<Eigen::Index>(i)] = bs;
    nn_comp[static_cast<Eigen::Index>(i)] = bc;
  }
  t.structure = discretize::percentile(nn_struct, q);
  t.composition = discretize::percentile(nn_comp, q);
  return t;
}

Coverage coverage(std::span<const Eigen::VectorXd> generated,
                  std::span<const Eigen::VectorXd> reference,
                  const CoverageThresholds& thresholds, int bins) {
  if (generated.empty() || reference.empty()) throw DataError("coverage: empty set");
  auto covered = [&](const Eigen::VectorXd& x, std::span<const Eigen::VectorXd> pool) {
    for (const auto& y : pool) {
      const auto [ds, dc] = block_distances(x, y, bins);
      if (ds <= thresholds.structure && dc <= thresholds.composition) return true;
    }
    return false;
  };
  Coverage c;
  int hits = 0;
  for (const auto& r : reference) hits += covered(r, generated);
  c.recall = static_cast<double>(hits) / static_cast<double>(reference.size());
  hits = 0;
  for (const auto& g : generated) hits += covered(g, reference);
  c.precision = static_cast<double>(hits) / static_cast<double>(generated.size());
  return c;
}

}  // namespace dflow::metrics
