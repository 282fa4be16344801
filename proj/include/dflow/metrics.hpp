#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/crystal.hpp"

namespace dflow::metrics {

// ---- structure matching -----------------------------------------------------

struct MatchTolerances {
  double ltol = 0.3;       // relative length tolerance
  double stol = 0.5;       // site tolerance in units of (V / N)^(1/3)
  double angle_tol = 10.0; // degrees
};

/// Normalized RMS site displacement when the structures match, nullopt
/// otherwise. Cells are compared as given (no reduction, no supercells).
std::optional<double> structure_match(const DisorderedCrystal& pred,
                                      const DisorderedCrystal& truth,
                                      const MatchTolerances& tol = {});

struct MatchRate {
  double rate = 0.0;
  std::optional<double> rmse;  // mean over matched pairs
  int matched = 0;
};

MatchRate match_rate(std::span<const DisorderedCrystal> preds,
                     std::span<const DisorderedCrystal> truths,
                     const MatchTolerances& tol = {}, int threads = 1);

/// Minimum-cost perfect matching on a square cost matrix. Returns, for each
/// row, the assigned column.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);

// ---- validity ---------------------------------------------------------------

/// Smallest periodic Cartesian distance between occupied positions. Alternative
/// positions of one site are not compared with each other in the home cell.
double min_interatomic_distance(const DisorderedCrystal& crystal);

/// True when min_interatomic_distance >= d_min. Degenerate cells are invalid.
bool structural_validity(const DisorderedCrystal& crystal, double d_min = 0.5);

/// Atomic number -> list of common oxidation states.
class OxidationTable {
 public:
  /// Lines "Z symbol q1 q2 ..."; '#' starts a comment.
  static OxidationTable parse(std::string_view text);
  static const OxidationTable& builtin();

  const std::vector<int>* states(int z) const;

 private:
  std::map<int, std::vector<int>> states_;
};

/// Atomic number -> occupancy-weighted expected count in the cell.
std::map<int, double> expected_composition(const DisorderedCrystal& crystal);

struct CompositionCheck {
  bool valid = false;
  std::string reason;
};

/// Charge neutrality with one oxidation state per element, weighted by the
/// expected (possibly fractional) element counts.
CompositionCheck compositional_validity(const DisorderedCrystal& crystal,
                                        const OxidationTable& table = OxidationTable::builtin());

// ---- properties -------------------------------------------------------------

/// Expected mass over cell volume, g/cm^3.
double density(const DisorderedCrystal& crystal);

/// Number of distinct elements with nonzero probability on any site.
int n_el(const DisorderedCrystal& crystal);

/// Order-1 Wasserstein distance between two empirical distributions.
double wasserstein_1d(std::span<const double> xs, std::span<const double> ys);

// ---- fingerprints and coverage ---------------------------------------------

struct FingerprintConfig {
  double cutoff = 6.0;  // Angstrom
  double sigma = 0.2;   // Gaussian smearing, Angstrom
  int bins = 32;
  int realizations = 10;
};

/// Mean over ordered realizations of [smeared neighbor-distance histogram per
/// atom (bins), element fractions (D)].
Eigen::VectorXd fingerprint(const DisorderedCrystal& crystal, std::mt19937_64& rng,
                            const FingerprintConfig& config = {});

struct CoverageThresholds {
  double structure = 0.0;
  double composition = 0.0;
};

/// q-th percentile of nearest-neighbor distances within the reference set,
/// separately for the histogram block and the composition block.
CoverageThresholds calibrate_coverage(std::span<const Eigen::VectorXd> reference, int bins,
                                      double q = 95.0);

struct Coverage {
  double recall = 0.0;
  double precision = 0.0;
};

Coverage coverage(std::span<const Eigen::VectorXd> generated,
                  std::span<const Eigen::VectorXd> reference,
                  const CoverageThresholds& thresholds, int bins);

// ---- report -----------------------------------------------------------------

struct EvalReport {
  std::string task;
  int num_pred = 0;
  int num_ref = 0;
  std::optional<double> match_rate;
  std::optional<double> rmse;
  std::optional<double> structural_validity;
  std::optional<double> compositional_validity;
  std::optional<double> coverage_recall;
  std::optional<double> coverage_precision;
  std::optional<double> wdist_density;
  std::optional<double> wdist_n_el;
};

}  // namespace dflow::metrics
