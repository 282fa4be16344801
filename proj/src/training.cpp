#include "dflow/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dflow/error.hpp"
#include "dflow/parallel.hpp"

namespace dflow {
namespace {

using ad::Matrix;

// Targets and per-entry loss weights for a group of pairs, stacked row-wise.
struct LossTerms {
  Matrix lattice_target, lattice_weight;
  Matrix coords_target, coords_weight, extra_weight;
  Matrix s_target, s_weight;
  Matrix w_target, w_weight;
};

LossTerms build_terms(std::span<const TrainingPair> pairs, double share) {
  const auto graphs = static_cast<Eigen::Index>(pairs.size());
  Eigen::Index nodes = 0;
  for (const auto& p : pairs) nodes += p.state.num_sites();
  const Eigen::Index order = pairs.front().state.order();
  const Eigen::Index vocab = pairs.front().state.vocab_size();
  const double per_graph = share / static_cast<double>(graphs);

  LossTerms terms;
  terms.lattice_target.resize(graphs, 6);
  terms.lattice_weight = Matrix::Constant(graphs, 6, per_graph / 6.0);
  terms.coords_target.resize(nodes, 3 * order);
  terms.coords_weight = Matrix::Zero(nodes, 3 * order);
  terms.extra_weight = Matrix::Zero(nodes, 3 * order);
  terms.s_target.resize(nodes, vocab);
  terms.s_weight.resize(nodes, vocab);
  terms.w_target.resize(nodes, order);
  terms.w_weight.resize(nodes, order);

  Eigen::Index row = 0;
  for (Eigen::Index g = 0; g < graphs; ++g) {
    const TrainingPair& p = pairs[static_cast<std::size_t>(g)];
    const Eigen::Index n = p.state.num_sites();
    const double nd = static_cast<double>(n);
    terms.lattice_target.row(g) = p.lattice_target.transpose();
    terms.coords_target.middleRows(row, n) = p.coords_target;
    terms.coords_weight.block(row, 0, n, 3).setConstant(per_graph / (3.0 * nd));
    const double extra_channels = p.channel_mask.rightCols(order - 1).sum();
    if (extra_channels > 0.0) {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index l = 1; l < order; ++l) {
          terms.extra_weight.block(row + i, 3 * l, 1, 3)
              .setConstant(p.channel_mask(i, l) * per_graph / (3.0 * extra_channels));
        }
      }
    }
    terms.s_target.middleRows(row, n) = p.s_target;
    terms.s_weight.middleRows(row, n).setConstant(per_graph / (nd * static_cast<double>(vocab)));
    terms.w_target.middleRows(row, n) = p.w_target;
    terms.w_weight.middleRows(row, n).setConstant(per_graph / (nd * static_cast<double>(order)));
    row += n;
  }
  return terms;
}

double weighted_sq(const Matrix& v, const Matrix& target, const Matrix& weight) {
  return (weight.array() * (v - target).array().square()).sum();
}

void check_pairs(std::span<const TrainingPair> pairs) {
  if (pairs.empty()) throw UsageError("loss: empty batch");
  const int order = pairs.front().state.order();
  const int vocab = pairs.front().state.vocab_size();
  for (const auto& p : pairs) {
    if (p.state.order() != order || p.state.vocab_size() != vocab) {
      throw DataError("loss: pairs with different shapes in one batch");
    }
  }
}

}  // namespace

std::string_view to_string(Task task) { return task == Task::CSP ? "csp" : "dng"; }

Task parse_task(std::string_view text) {
  if (text == "csp" || text == "CSP") return Task::CSP;
  if (text == "dng" || text == "DNG") return Task::DNG;
  throw UsageError("unknown task '" + std::string(text) + "' (expected csp or dng)");
}

LossWeights LossWeights::defaults(Task task) {
  LossWeights w;
  if (task == Task::CSP) {
    w.s = 0.0;
    w.w = 0.0;
  }
  return w;
}

LossWeights LossWeights::normalized() const {
  const double sum = lattice + coords + coords_extra + s + w;
  if (!(sum > 0.0)) throw UsageError("loss weights must have a positive sum");
  return {lattice / sum, coords / sum, coords_extra / sum, s / sum, w / sum};
}

TrainingConfig TrainingConfig::for_task(Task task) {
  TrainingConfig config;
  config.task = task;
  config.weights = LossWeights::defaults(task);
  return config;
}

TrainingPair make_training_pair(const DisorderedCrystal& crystal, const FlowState& prior,
                                double t, Task task) {
  const FlowState data = geometry::state_from_crystal(crystal);
  const int n = data.num_sites();
  const int order = data.order();
  if (prior.num_sites() != n || prior.order() != order ||
      prior.vocab_size() != data.vocab_size()) {
    throw UsageError("make_training_pair: prior shape does not match the crystal");
  }

  TrainingPair pair;
  pair.t = t;
  pair.state = prior;

  pair.channel_mask = Eigen::MatrixXd::Zero(n, order);
  for (int i = 0; i < n; ++i) {
    const Site& site = crystal.site(i);
    pair.channel_mask(i, 0) = 1.0;
    if (!site.is_pd()) continue;
    for (int l = 1; l < order; ++l) pair.channel_mask(i, l) = site.pos_weights[l] > 0.0 ? 1.0 : 0.0;
  }

  pair.lattice_target = data.lattice - prior.lattice;
  pair.state.lattice = (1.0 - t) * prior.lattice + t * data.lattice;

  // Wrapped displacements with the mean over all active channels removed.
  Eigen::MatrixXd disp = Eigen::MatrixXd::Zero(n, 3 * order);
  Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
  double active = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < order; ++l) {
      if (pair.channel_mask(i, l) == 0.0) continue;
      for (int k = 0; k < 3; ++k) {
        disp(i, 3 * l + k) =
            geometry::wrap_displacement(data.coords(i, 3 * l + k) - prior.coords(i, 3 * l + k));
        mean[k] += disp(i, 3 * l + k);
      }
      active += 1.0;
    }
  }
  mean /= active;
  pair.coords_target = Eigen::MatrixXd::Zero(n, 3 * order);
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < order; ++l) {
      if (pair.channel_mask(i, l) == 0.0) continue;
      for (int k = 0; k < 3; ++k) {
        const double v = disp(i, 3 * l + k) - mean[k];
        pair.coords_target(i, 3 * l + k) = v;
        pair.state.coords(i, 3 * l + k) = wrap_unit(prior.coords(i, 3 * l + k) + t * v);
      }
    }
  }

  if (task == Task::CSP) {
    pair.state.s = data.s;
    pair.state.w = data.w;
    pair.s_target = Eigen::MatrixXd::Zero(n, data.vocab_size());
    pair.w_target = Eigen::MatrixXd::Zero(n, order);
    return pair;
  }
  pair.s_target.resize(n, data.vocab_size());
  pair.w_target.resize(n, order);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd s0 = prior.s.row(i).transpose();
    const Eigen::VectorXd s1 = data.s.row(i).transpose();
    pair.s_target.row(i) = geometry::sphere_log(geometry::simplex_to_sphere(s0),
                                                geometry::simplex_to_sphere(s1))
                               .transpose();
    pair.state.s.row(i) = geometry::simplex_interpolate(s0, s1, t).transpose();
    const Eigen::VectorXd w0 = prior.w.row(i).transpose();
    const Eigen::VectorXd w1 = data.w.row(i).transpose();
    pair.w_target.row(i) = geometry::sphere_log(geometry::simplex_to_sphere(w0),
                                                geometry::simplex_to_sphere(w1))
                               .transpose();
    pair.state.w.row(i) = geometry::simplex_interpolate(w0, w1, t).transpose();
  }
  return pair;
}

TrainingPair make_training_pair(const DisorderedCrystal& crystal, std::mt19937_64& rng,
                                Task task, const geometry::LengthPrior& length_prior) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double t = unit(rng);
  const FlowState prior = geometry::sample_priors(crystal.num_sites(), crystal.vocab_size(),
                                                  crystal.order(), rng, length_prior);
  return make_training_pair(crystal, prior, t, task);
}

ad::Var record_loss(ad::Tape& tape, const NetOutputs& outputs,
                    std::span<const TrainingPair> pairs, const LossWeights& weights,
                    double share, LossBreakdown* breakdown) {
  check_pairs(pairs);
  const LossWeights lambda = weights.normalized();
  const LossTerms terms = build_terms(pairs, share);
  LossBreakdown values;
  std::vector<ad::Var> parts;
  auto term = [&](double lambda_f, const ad::Var& v, const Matrix& target, const Matrix& weight,
                  double& slot) {
    if (lambda_f == 0.0) return;
    const ad::Var field = ad::weighted_square_error(v, target, weight);
    slot = field.value()(0, 0);
    parts.push_back(ad::scale(field, lambda_f));
  };
  tape.set_scope("loss");
  term(lambda.lattice, outputs.lattice, terms.lattice_target, terms.lattice_weight, values.lattice);
  term(lambda.coords, outputs.coords, terms.coords_target, terms.coords_weight, values.coords);
  if (pairs.front().state.order() > 1) {
    term(lambda.coords_extra, outputs.coords, terms.coords_target, terms.extra_weight,
         values.coords_extra);
  }
  term(lambda.s, outputs.s, terms.s_target, terms.s_weight, values.s);
  term(lambda.w, outputs.w, terms.w_target, terms.w_weight, values.w);
  if (parts.empty()) throw UsageError("loss: every field weight is zero");
  ad::Var total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
  values.total = total.value()(0, 0);
  tape.set_scope("");
  if (breakdown) *breakdown = values;
  return total;
}

LossBreakdown compute_loss(std::span<const TrainingPair> pairs,
                           std::span<const VelocityBundle> velocities,
                           const LossWeights& weights) {
  check_pairs(pairs);
  if (velocities.size() != pairs.size()) throw UsageError("compute_loss: size mismatch");
  const LossWeights lambda = weights.normalized();
  const LossTerms terms = build_terms(pairs, 1.0);
  Eigen::Index nodes = terms.coords_target.rows();
  Matrix lat(static_cast<Eigen::Index>(pairs.size()), 6);
  Matrix coords(nodes, terms.coords_target.cols());
  Matrix s(nodes, terms.s_target.cols());
  Matrix w(nodes, terms.w_target.cols());
  Eigen::Index row = 0;
  for (std::size_t g = 0; g < pairs.size(); ++g) {
    const VelocityBundle& v = velocities[g];
    const Eigen::Index n = pairs[g].state.num_sites();
    lat.row(static_cast<Eigen::Index>(g)) = v.lattice.transpose();
    coords.middleRows(row, n) = v.coords;
    s.middleRows(row, n) = v.s;
    w.middleRows(row, n) = v.w;
    row += n;
  }
  LossBreakdown out;
  out.lattice = weighted_sq(lat, terms.lattice_target, terms.lattice_weight);
  out.coords = weighted_sq(coords, terms.coords_target, terms.coords_weight);
  out.coords_extra = weighted_sq(coords, terms.coords_target, terms.extra_weight);
  out.s = weighted_sq(s, terms.s_target, terms.s_weight);
  out.w = weighted_sq(w, terms.w_target, terms.w_weight);
  out.total = lambda.lattice * out.lattice + lambda.coords * out.coords +
              lambda.coords_extra * out.coords_extra + lambda.s * out.s + lambda.w * out.w;
  return out;
}

LossAndGradients loss_and_gradients(const VelocityNet& net,
                                    std::span<const TrainingPair> pairs,
                                    const LossWeights& weights, int micro_batch, int threads) {
  check_pairs(pairs);
  micro_batch = std::max(micro_batch, 1);
  const int n = static_cast<int>(pairs.size());
  const int chunks = (n + micro_batch - 1) / micro_batch;
  std::vector<LossAndGradients> partial(static_cast<std::size_t>(chunks));
  parallel_for(chunks, threads, [&](int c) {
    const int begin = c * micro_batch;
    const int count = std::min(micro_batch, n - begin);
    const auto piece = pairs.subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(count));
    std::vector<FlowState> states;
    std::vector<double> times;
    for (const auto& p : piece) {
      states.push_back(p.state);
      times.push_back(p.t);
    }
    ad::Tape tape;
    const NetOutputs out = net.forward(tape, states, times);
    LossAndGradients& slot = partial[static_cast<std::size_t>(c)];
    const ad::Var loss = record_loss(tape, out, piece, weights,
                                     static_cast<double>(count) / static_cast<double>(n), &slot.loss);
    tape.backward(loss);
    slot.gradients = tape.parameter_gradients(net.params());
  });
  LossAndGradients result;
  result.gradients = ad::zero_gradients(net.params());
  for (const auto& p : partial) {
    ad::add_gradients(result.gradients, p.gradients);
    result.loss.lattice += p.loss.lattice;
    result.loss.coords += p.loss.coords;
    result.loss.coords_extra += p.loss.coords_extra;
    result.loss.s += p.loss.s;
    result.loss.w += p.loss.w;
    result.loss.total += p.loss.total;
  }
  return result;
}

TrainingResult train(VelocityNet& net, std::span<const DisorderedCrystal> data,
                     const TrainingConfig& config, const geometry::LengthPrior& length_prior,
                     const ProgressFn& progress) {
  if (data.empty()) throw DataError("train: empty dataset");
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw UsageError("train: invalid optimizer settings");
  }
  if (config.task == Task::CSP && (config.weights.s != 0.0 || config.weights.w != 0.0)) {
    throw UsageError("train: CSP requires zero loss weights for s and w");
  }
  for (const auto& c : data) {
    if (c.vocab_size() != net.config().vocab_size || c.order() != data.front().order() ||
        c.order() > net.config().order) {
      throw DataError("train: crystals must share the model's vocabulary and one order");
    }
  }

  ad::ParameterSet& params = net.params();
  ad::Gradients m = ad::zero_gradients(params);
  ad::Gradients v = ad::zero_gradients(params);
  std::mt19937_64 rng(config.seed);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  TrainingResult result;
  long step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<TrainingPair> pairs;
      pairs.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        pairs.push_back(make_training_pair(data[static_cast<std::size_t>(order[k])], rng,
                                           config.task, length_prior));
      }
      LossAndGradients lg;
      try {
        lg = loss_and_gradients(net, pairs, config.weights, config.micro_batch, config.threads);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(batch_index) + ": " + e.what());
      }
      if (!std::isfinite(lg.loss.total)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(batch_index));
      }
      const double norm = ad::global_norm(lg.gradients);
      if (!std::isfinite(norm)) {
        throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) +
                             " batch " + std::to_string(batch_index));
      }
      const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (int p = 0; p < params.size(); ++p) {
        const auto up = static_cast<std::size_t>(p);
        const Matrix g = lg.gradients[up] * clip;
        m[up] = config.beta1 * m[up] + (1.0 - config.beta1) * g;
        v[up] = config.beta2 * v[up] + (1.0 - config.beta2) * g.cwiseProduct(g);
        params.value(p).array() -= config.learning_rate * (m[up].array() / bc1) /
                                   ((v[up].array() / bc2).sqrt() + config.adam_epsilon);
      }
      epoch_sum += lg.loss.total * static_cast<double>(end - begin);
    }
    const double mean = epoch_sum / static_cast<double>(data.size());
    result.loss_history.push_back(mean);
    if (progress) progress(epoch, mean);
  }
  return result;
}

}  // namespace dflow
