#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dflow/autodiff.hpp"
#include "dflow/crystal.hpp"
#include "dflow/flow_state.hpp"

namespace dflow {

enum class EdgeMode { Concat, WeightedSum };

struct NetConfig {
  int vocab_size = kDefaultVocabSize;
  /// Positional capacity. Inputs of lower order are zero-padded internally.
  int order = 2;
  int hidden_dim = 512;
  int num_layers = 6;
  int n_freq = 128;
  int time_dim = 32;
  int max_sites = kDefaultMaxSites;

  /// Concatenated pair blocks for binary positional disorder, weighted sums
  /// otherwise.
  EdgeMode edge_mode() const { return order == 2 ? EdgeMode::Concat : EdgeMode::WeightedSum; }
};

/// [sin(2 pi k d), cos(2 pi k d)] blocks per axis: for each axis, n_freq sines
/// followed by n_freq cosines (k = 1..n_freq).
Eigen::RowVectorXd sinusoidal_embedding(const Eigen::RowVector3d& d, int n_freq);

struct EdgeFeatures {
  Eigen::RowVectorXd dist;
  Eigen::RowVectorXd dir;
};

/// Occupancy-weighted pair features between two sites. `fi`, `fj` are
/// order x 3 coordinate matrices, `metric` is M(l) = L^T L. Displacements are
/// wrapped before both the embedding and the direction.
EdgeFeatures edge_features(const Eigen::MatrixXd& fi, const Eigen::VectorXd& wi,
                           const Eigen::MatrixXd& fj, const Eigen::VectorXd& wj,
                           const Eigen::Matrix3d& metric, EdgeMode mode, int n_freq);

/// Width of [dist, dir] for one edge.
int edge_feature_dim(EdgeMode mode, int order, int n_freq);

/// Output nodes of one batched forward pass. Rows are the concatenated sites of
/// all graphs, in input order.
struct NetOutputs {
  ad::Var lattice;  // graphs x 6
  ad::Var coords;   // sites x 3 * input order
  ad::Var s;        // sites x D, tangent at sqrt(s_t)
  ad::Var w;        // sites x input order, tangent at sqrt(w_t)
};

class VelocityNet {
 public:
  explicit VelocityNet(NetConfig config);

  const NetConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  /// Fan-in uniform weights; the last layer of every output head is zeroed.
  void initialize(std::mt19937_64& rng);
  /// Fan-in uniform weights everywhere, heads included.
  void randomize(std::mt19937_64& rng);

  /// Records the network on `tape` for a batch of graphs. `times` holds one
  /// time per graph. All states must share D and have order <= config().order.
  NetOutputs forward(ad::Tape& tape, std::span<const FlowState> states,
                     std::span<const double> times) const;

  std::vector<VelocityBundle> evaluate(std::span<const FlowState> states,
                                       std::span<const double> times) const;
  VelocityBundle evaluate(const FlowState& state, double t) const;

  /// Initial node features h^(0) for a batch of (s, t) rows.
  Eigen::MatrixXd node_features(const Eigen::MatrixXd& s, std::span<const double> times) const;

  /// FNV-1a over the parameter bytes.
  std::uint64_t checksum() const;

 private:
  ad::Var node_init(ad::Tape& tape, const Eigen::MatrixXd& s,
                    const Eigen::MatrixXd& time_features) const;
  ad::Var mlp2(ad::Tape& tape, const ad::Var& x, const std::string& prefix) const;
  ad::Var param(ad::Tape& tape, const std::string& name) const;
  void add_linear(const std::string& prefix, int layer, int in, int out);

  NetConfig config_;
  ad::ParameterSet params_;
  std::vector<int> zero_init_;  // parameter indices of head output layers
};

/// Sinusoidal features of the scalar time, time_dim wide.
Eigen::RowVectorXd time_embedding(double t, int time_dim);

}  // namespace dflow
