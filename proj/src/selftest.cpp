#include "dflow/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "dflow/geometry.hpp"
#include "dflow/training.hpp"
#include "dflow/velocity_net.hpp"

namespace dflow::selftest {
namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string sci(double x) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << x;
  return out.str();
}

// Dirichlet-like draws with a spread of shapes: flat, peaked, sparse and tied.
Eigen::VectorXd random_probabilities(int d, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 3);
  std::exponential_distribution<double> exponential(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd p(d);
  switch (kind(rng)) {
    case 0:
      for (int k = 0; k < d; ++k) p[k] = exponential(rng);
      break;
    case 1:
      for (int k = 0; k < d; ++k) p[k] = std::pow(exponential(rng), 4.0);
      break;
    case 2:
      for (int k = 0; k < d; ++k) p[k] = unit(rng) < 0.3 ? exponential(rng) : 0.0;
      if (p.sum() == 0.0) p[0] = 1.0;
      break;
    default:
      for (int k = 0; k < d; ++k) p[k] = std::floor(unit(rng) * 4.0);
      if (p.sum() == 0.0) p[d - 1] = 1.0;
      break;
  }
  return p / p.sum();
}

}  // namespace

SuiteResult geometry_suite(std::uint64_t seed, int pairs) {
  Timer timer;
  SuiteResult result{"geometry", true, "", 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_distance = 0.0, worst_roundtrip = 0.0, worst_sum = 0.0, lowest = 0.0;
  bool endpoints = true;
  for (int d : {2, 5, 100}) {
    for (int i = 0; i < pairs; ++i) {
      const Eigen::VectorXd mu = geometry::sample_uniform_simplex(d, rng);
      const Eigen::VectorXd nu = geometry::sample_uniform_simplex(d, rng);
      const Eigen::VectorXd x = geometry::simplex_to_sphere(mu);
      const Eigen::VectorXd y = geometry::simplex_to_sphere(nu);
      worst_distance = std::max(worst_distance, std::abs(geometry::sphere_distance(x, y) -
                                                         0.5 * geometry::fisher_rao_distance(mu, nu)));
      worst_roundtrip = std::max(
          worst_roundtrip, (geometry::sphere_exp(x, geometry::sphere_log(x, y)) - y).cwiseAbs().maxCoeff());
      const Eigen::VectorXd mid = geometry::simplex_interpolate(mu, nu, unit(rng));
      worst_sum = std::max(worst_sum, std::abs(mid.sum() - 1.0));
      lowest = std::min(lowest, mid.minCoeff());
      endpoints = endpoints && geometry::simplex_interpolate(mu, nu, 0.0) == mu &&
                  geometry::simplex_interpolate(mu, nu, 1.0) == nu;
    }
  }
  result.passed = worst_distance < 1e-10 && worst_roundtrip < 1e-9 && worst_sum < 1e-9 &&
                  lowest >= -1e-12 && endpoints;
  result.detail = "distance " + sci(worst_distance) + ", exp(log) " + sci(worst_roundtrip) +
                  ", path sum " + sci(worst_sum) + ", path min " + sci(lowest) +
                  (endpoints ? ", endpoints exact" : ", endpoints differ");
  result.seconds = timer.seconds();
  return result;
}

SuiteResult torus_suite(std::uint64_t seed, int trials) {
  Timer timer;
  SuiteResult result{"torus", true, "", 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> size(1, 12);
  auto random_matrix = [&](int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = unit(rng);
    return m;
  };
  auto periodic_gap = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double worst = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      worst = std::max(worst, std::abs(geometry::wrap_displacement(a.data()[k] - b.data()[k])));
    }
    return worst;
  };
  double worst_roundtrip = 0.0, worst_mean = 0.0, worst_shift = 0.0;
  for (int i = 0; i < trials; ++i) {
    const int n = size(rng);
    const Eigen::MatrixXd f0 = random_matrix(n, 3);
    const Eigen::MatrixXd f1 = random_matrix(n, 3);
    const Eigen::MatrixXd v = geometry::torus_log(f0, f1);
    worst_roundtrip = std::max(worst_roundtrip, periodic_gap(geometry::torus_exp(f0, v), f1));
    worst_mean = std::max(worst_mean, geometry::remove_mean(v).colwise().sum().cwiseAbs().maxCoeff());
    const Eigen::RowVector3d shift = random_matrix(1, 3);
    const Eigen::MatrixXd moved0 =
        geometry::torus_exp(f0, shift.replicate(n, 1));
    const Eigen::MatrixXd moved1 =
        geometry::torus_exp(f1, shift.replicate(n, 1));
    worst_shift = std::max(worst_shift, (geometry::torus_log(moved0, moved1) - v).cwiseAbs().maxCoeff());
  }
  result.passed = worst_roundtrip < 1e-12 && worst_mean < 1e-10 && worst_shift < 1e-12;
  result.detail = "exp(log) " + sci(worst_roundtrip) + ", mean-removed sum " + sci(worst_mean) +
                  ", translation " + sci(worst_shift);
  result.seconds = timer.seconds();
  return result;
}

SuiteResult gradient_suite(std::uint64_t seed, const GradientCheckOptions& o) {
  Timer timer;
  SuiteResult result{"gradient", true, "", 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  NetConfig config;
  config.vocab_size = o.vocab_size;
  config.order = o.order;
  config.hidden_dim = o.hidden_dim;
  config.num_layers = o.num_layers;
  config.n_freq = 4;
  config.time_dim = 8;
  config.max_sites = std::max(8, o.num_sites);
  VelocityNet net(config);
  net.randomize(rng);

  // Crystals with substitutional and positional disorder so every loss term is active.
  std::vector<TrainingPair> pairs;
  const geometry::LengthPrior prior;
  for (int g = 0; g < o.graphs; ++g) {
    const LatticeParams lattice{3.0 + 3.0 * unit(rng), 3.0 + 3.0 * unit(rng), 3.0 + 3.0 * unit(rng),
                                70.0 + 40.0 * unit(rng), 70.0 + 40.0 * unit(rng), 70.0 + 40.0 * unit(rng)};
    std::vector<Site> sites;
    for (int i = 0; i < o.num_sites; ++i) {
      Site site;
      site.s = geometry::sample_uniform_simplex(o.vocab_size, rng);
      site.positions = Eigen::MatrixX3d::Zero(o.order, 3);
      site.pos_weights = Eigen::VectorXd::Zero(o.order);
      const int active = (i % 2 == 0) ? o.order : 1;
      for (int l = 0; l < active; ++l) {
        for (int k = 0; k < 3; ++k) site.positions(l, k) = unit(rng);
        site.pos_weights[l] = 0.2 + unit(rng);
      }
      site.pos_weights /= site.pos_weights.sum();
      sites.push_back(std::move(site));
    }
    const DisorderedCrystal crystal =
        DisorderedCrystal::create(lattice, std::move(sites), o.vocab_size);
    pairs.push_back(make_training_pair(crystal, rng, Task::DNG, prior));
  }

  const LossWeights weights = LossWeights::defaults(Task::DNG);
  const LossAndGradients analytic = loss_and_gradients(net, pairs, weights);
  std::vector<FlowState> states;
  std::vector<double> times;
  for (const auto& p : pairs) {
    states.push_back(p.state);
    times.push_back(p.t);
  }
  auto loss_at = [&]() { return compute_loss(pairs, net.evaluate(states, times), weights).total; };

  double worst = 0.0;
  std::string worst_name;
  Eigen::Index entries = 0;
  ad::ParameterSet& params = net.params();
  for (int i = 0; i < params.size(); ++i) {
    ad::Matrix& value = params.value(i);
    const ad::Matrix& grad = analytic.gradients[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < value.size(); ++k, ++entries) {
      const double saved = value.data()[k];
      value.data()[k] = saved + o.step;
      const double up = loss_at();
      value.data()[k] = saved - o.step;
      const double down = loss_at();
      value.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * o.step);
      const double a = grad.data()[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = params.name(i);
      }
    }
  }
  result.passed = worst < o.tolerance;
  result.detail = std::to_string(entries) + " entries, max relative error " + sci(worst) +
                  (worst_name.empty() ? "" : " (" + worst_name + ")");
  result.seconds = timer.seconds();
  return result;
}

std::vector<int> reference_selection(const Eigen::VectorXd& p,
                                     const discretize::DiscretizeConfig& c) {
  const int d = static_cast<int>(p.size());
  int top = 0;
  for (int j = 1; j < d; ++j) {
    if (p[j] > p[top]) top = j;
  }
  double runner_up = 0.0;
  bool has_runner_up = false;
  for (int j = 0; j < d; ++j) {
    if (j == top) continue;
    if (!has_runner_up || p[j] > runner_up) runner_up = p[j];
    has_runner_up = true;
  }
  if (!has_runner_up || runner_up <= 0.0 || p[top] / runner_up > c.ratio) return {top};

  std::vector<int> votes(static_cast<std::size_t>(d), 0);

  // Top-k: repeatedly take the largest remaining entry, lowest index on ties.
  std::vector<bool> taken(static_cast<std::size_t>(d), false);
  for (int round = 0; round < std::min(c.top_k, d); ++round) {
    int best = -1;
    for (int j = 0; j < d; ++j) {
      if (!taken[j] && (best < 0 || p[j] > p[best])) best = j;
    }
    taken[best] = true;
    ++votes[best];
  }

  for (int j = 0; j < d; ++j) {
    if (p[j] > c.abs_threshold) ++votes[j];
  }

  std::vector<double> sorted(p.data(), p.data() + d);
  std::sort(sorted.begin(), sorted.end());
  const double rank = c.percentile / 100.0 * (d - 1);
  const int below = static_cast<int>(std::floor(rank));
  const int above = std::min(below + 1, d - 1);
  const double cut = sorted[below] + (rank - below) * (sorted[above] - sorted[below]);
  for (int j = 0; j < d; ++j) {
    if (p[j] > cut) ++votes[j];
  }

  const double adaptive = c.adaptive_alpha * p[top];
  for (int j = 0; j < d; ++j) {
    if (p[j] > adaptive) ++votes[j];
  }

  double entropy = 0.0;
  for (int j = 0; j < d; ++j) {
    if (p[j] > 0.0) entropy -= p[j] * std::log(p[j]);
  }
  if (entropy / std::log(static_cast<double>(d)) > c.entropy_threshold) {
    ++votes[top];
  } else {
    for (int j = 0; j < d; ++j) {
      if (p[j] > adaptive) ++votes[j];
    }
  }

  std::vector<int> chosen;
  for (int j = 0; j < d; ++j) {
    if (votes[j] >= c.vote_threshold) chosen.push_back(j);
  }
  if (chosen.empty()) chosen.push_back(top);
  return chosen;
}

SuiteResult discretization_suite(std::uint64_t seed, int vectors) {
  Timer timer;
  SuiteResult result{"discretization", true, "", 0.0};
  std::mt19937_64 rng(seed);
  const discretize::DiscretizeConfig config;
  int mismatches = 0, total = 0;
  for (int d : {2, 5, 100}) {
    for (int i = 0; i < vectors; ++i, ++total) {
      const Eigen::VectorXd p = random_probabilities(d, rng);
      if (discretize::ensemble_vote(p, config).selected != reference_selection(p, config)) {
        if (mismatches == 0) {
          std::ostringstream out;
          out << "first mismatch at D=" << d << " vector " << i;
          result.detail = out.str();
        }
        ++mismatches;
      }
    }
  }
  result.passed = mismatches == 0;
  result.detail = std::to_string(total - mismatches) + "/" + std::to_string(total) + " agree" +
                  (result.detail.empty() ? "" : ", " + result.detail);
  result.seconds = timer.seconds();
  return result;
}

std::vector<SuiteResult> run_all(std::uint64_t seed) {
  return {geometry_suite(seed), torus_suite(seed + 1), gradient_suite(seed + 2),
          discretization_suite(seed + 3)};
}

}  // namespace dflow::selftest
