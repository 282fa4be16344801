#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "dflow/autodiff.hpp"
#include "dflow/crystal.hpp"
#include "dflow/flow_state.hpp"
#include "dflow/geometry.hpp"
#include "dflow/velocity_net.hpp"

namespace dflow {

/// CSP keeps the disorder weights fixed at their data values and generates
/// geometry only; DNG generates every field.
enum class Task { CSP, DNG };

std::string_view to_string(Task task);
/// Accepts "csp" or "dng"; throws UsageError otherwise.
Task parse_task(std::string_view text);

/// Relative per-field weights. `coords` is the first position channel,
/// `coords_extra` the remaining channels of positionally disordered sites.
struct LossWeights {
  double lattice = 1.0;
  double coords = 400.0;
  double coords_extra = 40.0;
  double s = 2000.0;
  double w = 40.0;

  static LossWeights defaults(Task task);
  /// Divides every weight by their sum.
  LossWeights normalized() const;
};

struct TrainingConfig {
  Task task = Task::DNG;
  LossWeights weights = LossWeights::defaults(Task::DNG);
  double learning_rate = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 2000;
  int batch_size = 512;
  /// Graphs per forward pass; gradients of the pieces are summed in order.
  int micro_batch = 16;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  int threads = 1;

  /// Defaults with the weights of the given task.
  static TrainingConfig for_task(Task task);
};

/// One conditional-path sample with its regression targets.
struct TrainingPair {
  double t = 0.0;
  FlowState state;
  UnconstrainedLattice lattice_target = UnconstrainedLattice::Zero();
  Eigen::MatrixXd coords_target;  // N x 3*order, mean removed over active channels
  Eigen::MatrixXd s_target;       // N x D, tangent at sqrt(s_0)
  Eigen::MatrixXd w_target;       // N x order, tangent at sqrt(w_0)
  /// N x order, 1 where a position channel takes part in the coordinate loss.
  Eigen::MatrixXd channel_mask;
};

/// Builds the pair for a given prior draw and time (replayable).
TrainingPair make_training_pair(const DisorderedCrystal& crystal, const FlowState& prior,
                                double t, Task task);
/// Draws t ~ U(0,1) and a prior state, then builds the pair.
TrainingPair make_training_pair(const DisorderedCrystal& crystal, std::mt19937_64& rng,
                                Task task, const geometry::LengthPrior& length_prior);

struct LossBreakdown {
  double lattice = 0.0;
  double coords = 0.0;
  double coords_extra = 0.0;
  double s = 0.0;
  double w = 0.0;
  double total = 0.0;
};

/// Records the objective on the tape, averaged over the pairs and multiplied
/// by `share` (the fraction of the full batch these pairs represent). Fields
/// with zero weight are left out of the graph entirely.
ad::Var record_loss(ad::Tape& tape, const NetOutputs& outputs,
                    std::span<const TrainingPair> pairs, const LossWeights& weights,
                    double share, LossBreakdown* breakdown = nullptr);

/// Objective for given velocities, averaged over the pairs.
LossBreakdown compute_loss(std::span<const TrainingPair> pairs,
                           std::span<const VelocityBundle> velocities,
                           const LossWeights& weights);

struct LossAndGradients {
  LossBreakdown loss;
  ad::Gradients gradients;
};

/// Batch objective and its exact gradient with respect to net.params().
LossAndGradients loss_and_gradients(const VelocityNet& net,
                                    std::span<const TrainingPair> pairs,
                                    const LossWeights& weights, int micro_batch = 16,
                                    int threads = 1);

struct TrainingResult {
  std::vector<double> loss_history;  // per-epoch mean total loss
};

using ProgressFn = std::function<void(int epoch, double mean_loss)>;

/// Adam on the flow-matching objective. The network is trained in place from
/// its current parameters.
TrainingResult train(VelocityNet& net, std::span<const DisorderedCrystal> data,
                     const TrainingConfig& config, const geometry::LengthPrior& length_prior,
                     const ProgressFn& progress = {});

}  // namespace dflow
