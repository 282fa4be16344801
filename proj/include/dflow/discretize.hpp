#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <vector>

#include "dflow/crystal.hpp"

/// Turns continuous occupancy vectors into multi-hot selections: a sharpness
/// test for ordered sites, then a vote among five selection heuristics.
namespace dflow::discretize {

struct DiscretizeConfig {
  double ratio = 3.0;         // top-1 / top-2 ratio above which a site is ordered
  int top_k = 2;
  double abs_threshold = 0.2;
  double percentile = 95.0;
  double adaptive_alpha = 0.2;  // fraction of the maximum
  double entropy_threshold = 0.9;
  int vote_threshold = 4;

  /// Throws UsageError when a value is outside its natural range.
  void check() const;
};

struct MultiHotAssignment {
  std::vector<int> selected;  // ascending
  Eigen::VectorXd weights;    // full length; renormalized over `selected`, zero elsewhere
};

/// Index of the largest entry; ties go to the lowest index.
int argmax(const Eigen::VectorXd& p);

/// Entropy (natural log, 0 log 0 = 0) divided by log(size).
double normalized_entropy(const Eigen::VectorXd& p);

/// Linear-interpolation quantile over all entries, q in [0, 100].
double percentile(const Eigen::VectorXd& p, double q);

/// The argmax when top-1 / top-2 exceeds the ratio (a zero runner-up counts as
/// an infinite ratio).
std::optional<int> stage1_ordered(const Eigen::VectorXd& p, const DiscretizeConfig& config);

/// Candidate sets in the order top-k, absolute, percentile, adaptive, entropy.
std::array<std::vector<int>, 5> heuristics(const Eigen::VectorXd& p,
                                           const DiscretizeConfig& config);

/// Votes per index summed over the five heuristics.
Eigen::VectorXi vote_counts(const Eigen::VectorXd& p, const DiscretizeConfig& config);

MultiHotAssignment ensemble_vote(const Eigen::VectorXd& p, const DiscretizeConfig& config);

/// Applies ensemble_vote to every s and w; deselected positions are zeroed.
DisorderedCrystal discretize_crystal(const DisorderedCrystal& crystal,
                                     const DiscretizeConfig& config = {});

}  // namespace dflow::discretize
