#include "dflow/discretize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dflow/error.hpp"

namespace dflow::discretize {
namespace {

std::vector<int> select_above(const Eigen::VectorXd& p, double cutoff) {
  std::vector<int> out;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (p[j] > cutoff) out.push_back(static_cast<int>(j));
  }
  return out;
}

MultiHotAssignment make_assignment(const Eigen::VectorXd& p, std::vector<int> selected) {
  MultiHotAssignment a;
  a.selected = std::move(selected);
  a.weights = Eigen::VectorXd::Zero(p.size());
  double total = 0.0;
  for (int j : a.selected) total += p[j];
  for (int j : a.selected) a.weights[j] = total > 0.0 ? p[j] / total : 1.0 / a.selected.size();
  return a;
}

}  // namespace

void DiscretizeConfig::check() const {
  if (!(ratio > 1.0)) throw UsageError("discretize: ratio must exceed 1");
  if (top_k < 1) throw UsageError("discretize: top_k must be >= 1");
  if (!(abs_threshold >= 0.0 && abs_threshold <= 1.0)) {
    throw UsageError("discretize: abs_threshold must lie in [0, 1]");
  }
  if (!(percentile >= 0.0 && percentile <= 100.0)) {
    throw UsageError("discretize: percentile must lie in [0, 100]");
  }
  if (!(adaptive_alpha >= 0.0 && adaptive_alpha <= 1.0)) {
    throw UsageError("discretize: adaptive_alpha must lie in [0, 1]");
  }
  if (!(entropy_threshold >= 0.0 && entropy_threshold <= 1.0)) {
    throw UsageError("discretize: entropy_threshold must lie in [0, 1]");
  }
  if (vote_threshold < 1 || vote_threshold > 5) {
    throw UsageError("discretize: vote_threshold must lie in [1, 5]");
  }
}

int argmax(const Eigen::VectorXd& p) {
  int best = 0;
  for (Eigen::Index j = 1; j < p.size(); ++j) {
    if (p[j] > p[best]) best = static_cast<int>(j);
  }
  return best;
}

double normalized_entropy(const Eigen::VectorXd& p) {
  if (p.size() < 2) return 0.0;
  double h = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
  }
  return h / std::log(static_cast<double>(p.size()));
}

double percentile(const Eigen::VectorXd& p, double q) {
  std::vector<double> v(p.data(), p.data() + p.size());
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::optional<int> stage1_ordered(const Eigen::VectorXd& p, const DiscretizeConfig& config) {
  const int top = argmax(p);
  if (p.size() < 2) return top;
  double second = -1.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (j != top) second = std::max(second, p[j]);
  }
  if (second <= 0.0) return top;
  if (p[top] / second > config.ratio) return top;
  return std::nullopt;
}

std::array<std::vector<int>, 5> heuristics(const Eigen::VectorXd& p,
                                           const DiscretizeConfig& config) {
  std::array<std::vector<int>, 5> v;

  std::vector<int> order(static_cast<std::size_t>(p.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&p](int a, int b) { return p[a] > p[b]; });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(config.top_k)));
  std::sort(order.begin(), order.end());
  v[0] = std::move(order);

  v[1] = select_above(p, config.abs_threshold);
  v[2] = select_above(p, percentile(p, config.percentile));
  v[3] = select_above(p, config.adaptive_alpha * p.maxCoeff());
  if (normalized_entropy(p) > config.entropy_threshold) {
    v[4] = {argmax(p)};
  } else {
    v[4] = v[3];
  }
  return v;
}

Eigen::VectorXi vote_counts(const Eigen::VectorXd& p, const DiscretizeConfig& config) {
  Eigen::VectorXi votes = Eigen::VectorXi::Zero(p.size());
  for (const auto& candidate : heuristics(p, config)) {
    for (int j : candidate) ++votes[j];
  }
  return votes;
}

MultiHotAssignment ensemble_vote(const Eigen::VectorXd& p, const DiscretizeConfig& config) {
  if (p.size() == 0) throw DataError("discretize: empty probability vector");
  if (const auto top = stage1_ordered(p, config)) return make_assignment(p, {*top});
  const Eigen::VectorXi votes = vote_counts(p, config);
  std::vector<int> selected;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (votes[j] >= config.vote_threshold) selected.push_back(static_cast<int>(j));
  }
  if (selected.empty()) selected.push_back(argmax(p));
  return make_assignment(p, std::move(selected));
}

DisorderedCrystal discretize_crystal(const DisorderedCrystal& crystal,
                                     const DiscretizeConfig& config) {
  config.check();
  std::vector<Site> sites = crystal.sites();
  for (Site& site : sites) {
    site.s = ensemble_vote(site.s, config).weights;
    site.pos_weights = ensemble_vote(site.pos_weights, config).weights;
    for (Eigen::Index l = 0; l < site.pos_weights.size(); ++l) {
      if (site.pos_weights[l] == 0.0) site.positions.row(l).setZero();
    }
  }
  return DisorderedCrystal::create(crystal.lattice(), std::move(sites), crystal.vocab_size(),
                                   std::max(kDefaultMaxSites, crystal.num_sites()));
}

}  // namespace dflow::discretize
