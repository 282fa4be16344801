#pragma once

#include <Eigen/Core>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dflow {

/// Element vocabulary size. Index k corresponds to atomic number k + 1.
inline constexpr int kDefaultVocabSize = 100;
inline constexpr int kDefaultMaxSites = 160;

/// Cell lengths in Angstrom and angles in degrees.
struct LatticeParams {
  double a = 1.0;
  double b = 1.0;
  double c = 1.0;
  double alpha = 90.0;
  double beta = 90.0;
  double gamma = 90.0;

  friend bool operator==(const LatticeParams&, const LatticeParams&) = default;
};

/// One crystallographic site: a distribution over elements and a distribution
/// over up to `order()` alternative positions.
///
/// Rows of `positions` whose weight is exactly zero are kept as zero rows so
/// that every site of a crystal has the same shape.
struct Site {
  Eigen::VectorXd s;            // length D, on the simplex
  Eigen::MatrixX3d positions;   // order x 3 fractional coordinates in [0,1)
  Eigen::VectorXd pos_weights;  // length order, on the simplex

  int order() const { return static_cast<int>(pos_weights.size()); }
  int active_positions() const;
  /// Positionally disordered: at least two positions carry weight.
  bool is_pd() const { return active_positions() >= 2; }
  /// Substitutionally disordered: at least two elements carry weight.
  bool is_sd() const;
};

struct Violation {
  int site;  // -1 for crystal-level constraints
  std::string constraint;
  std::string detail;
};

/// A lattice plus sites sharing one vocabulary size and one positional order.
///
/// The plain constructor stores its arguments verbatim so that invalid
/// structures can still be inspected with `validate`. Use `create` to get the
/// canonical form (wrapped coordinates, renormalized probabilities) with all
/// invariants enforced.
class DisorderedCrystal {
 public:
  DisorderedCrystal() = default;
  DisorderedCrystal(LatticeParams lattice, std::vector<Site> sites,
                    int vocab_size = kDefaultVocabSize);

  /// Canonicalizes and validates; throws DataError listing the violations.
  static DisorderedCrystal create(LatticeParams lattice, std::vector<Site> sites,
                                  int vocab_size = kDefaultVocabSize,
                                  int max_sites = kDefaultMaxSites);

  const LatticeParams& lattice() const { return lattice_; }
  const std::vector<Site>& sites() const { return sites_; }
  const Site& site(int i) const { return sites_[static_cast<std::size_t>(i)]; }
  int num_sites() const { return static_cast<int>(sites_.size()); }
  int vocab_size() const { return vocab_size_; }
  /// Positional order shared by all sites (0 for an empty crystal).
  int order() const { return sites_.empty() ? 0 : sites_.front().order(); }

  static int atomic_number(int index) { return index + 1; }
  /// Vocabulary index of atomic number `z`; throws DataError when out of range.
  int element_index(int z) const;

  bool is_ordered() const;

 private:
  LatticeParams lattice_;
  std::vector<Site> sites_;
  int vocab_size_ = kDefaultVocabSize;
};

/// Empty iff every structural invariant holds.
std::vector<Violation> validate(const DisorderedCrystal& crystal,
                                int max_sites = kDefaultMaxSites);

/// Maps a value into [0, 1).
double wrap_unit(double x);

/// Ordered structure -> unified representation with one-hot element vectors
/// and all positional weight on the first channel.
DisorderedCrystal from_ordered(std::span<const int> atomic_numbers,
                               const Eigen::MatrixX3d& coords,
                               const LatticeParams& lattice,
                               int vocab_size = kDefaultVocabSize, int order = 2);

/// Appends zero rows and zero weights up to `new_order`. Shrinking is allowed
/// only when the dropped channels carry no weight.
DisorderedCrystal pad_to_order(const DisorderedCrystal& crystal, int new_order);

/// Draws one element and one position per site. The result is ordered and
/// keeps the input's shape.
DisorderedCrystal sample_realization(const DisorderedCrystal& crystal,
                                     std::mt19937_64& rng);

/// Inverse-CDF draw from unnormalized nonnegative weights.
int sample_categorical(std::span<const double> weights, std::mt19937_64& rng);

}  // namespace dflow
