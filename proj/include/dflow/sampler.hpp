#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dflow/crystal.hpp"
#include "dflow/flow_state.hpp"
#include "dflow/geometry.hpp"
#include "dflow/training.hpp"
#include "dflow/velocity_net.hpp"

namespace dflow {

struct SamplerConfig {
  int steps = 1000;
  /// Coordinate velocities are scaled by 1 + slope * t.
  double slope = 20.0;
  Task task = Task::DNG;
  std::uint64_t seed = 0;
  /// Chains evaluated together in one network call.
  int chunk_size = 32;
  int threads = 1;
};

/// Velocities for a batch of states at a common time.
using VelocityField =
    std::function<std::vector<VelocityBundle>(std::span<const FlowState>, double t)>;

VelocityField network_field(const VelocityNet& net);

/// One integration chain.
struct Chain {
  FlowState state;
  /// N x order; 1 where the coordinate channel is integrated.
  Eigen::MatrixXd channel_mask;
  /// True in CSP: s and w are never touched.
  bool fixed_weights = false;
};

/// Euler integration from t = 0 to t = 1 on every factor of the state. Sphere
/// states are stepped with the exponential map after projecting the velocity
/// onto the tangent plane at the current point, then renormalized.
/// Throws NumericalError naming the step on a non-finite state.
std::vector<FlowState> integrate(std::vector<Chain> chains, const VelocityField& field,
                                 const SamplerConfig& config);

struct SampleResult {
  DisorderedCrystal crystal;
  FlowState state;  // final raw state
  std::vector<std::string> warnings;
};

/// Converts a final state into a crystal: angles clamped to [60, 120],
/// non-positive lengths clamped to a small positive value, both with warnings.
SampleResult finalize_state(const FlowState& state, int vocab_size);

/// Generator for chain `index` under `seed`.
std::mt19937_64 chain_rng(std::uint64_t seed, std::uint64_t index);

std::vector<SampleResult> sample_dng(const VelocityField& field,
                                     const geometry::LengthPrior& length_prior,
                                     std::span<const int> num_sites, int vocab_size, int order,
                                     const SamplerConfig& config);

/// One structure per condition; s and w of the output equal the condition.
std::vector<SampleResult> sample_csp(const VelocityField& field,
                                     const geometry::LengthPrior& length_prior,
                                     std::span<const DisorderedCrystal> conditions,
                                     const SamplerConfig& config);

/// Categorical distribution over atom counts observed in training data.
class SizeSampler {
 public:
  explicit SizeSampler(std::span<const int> counts);
  int draw(std::mt19937_64& rng) const;
  /// (count, frequency) pairs sorted by count.
  const std::vector<std::pair<int, double>>& histogram() const { return histogram_; }

 private:
  std::vector<std::pair<int, double>> histogram_;
};

/// Draws sizes from `sizes` with a generator seeded by config.seed, then
/// samples one DNG structure per size.
std::vector<SampleResult> sample_batch(const VelocityField& field,
                                       const geometry::LengthPrior& length_prior,
                                       const SizeSampler& sizes, int count, int vocab_size,
                                       int order, const SamplerConfig& config);

}  // namespace dflow
