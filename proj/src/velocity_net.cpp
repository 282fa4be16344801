#include "dflow/velocity_net.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "dflow/error.hpp"
#include "dflow/geometry.hpp"

namespace dflow {
namespace {

using ad::Matrix;
using ad::Tape;
using ad::Var;

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kZeroDirection = 1e-8;

ad::IndexList make_index(std::vector<int> v) {
  return std::make_shared<const std::vector<int>>(std::move(v));
}

// One site's coordinates as an order x 3 matrix, zero-padded to `order`.
Eigen::MatrixXd site_coords(const FlowState& state, int i, int order) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(order, 3);
  for (int l = 0; l < state.order(); ++l) f.row(l) = state.coords.block(i, 3 * l, 1, 3);
  return f;
}

Eigen::VectorXd site_weights(const FlowState& state, int i, int order) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(order);
  w.head(state.order()) = state.w.row(i).transpose();
  return w;
}

Eigen::RowVector3d direction(const Eigen::RowVector3d& d, const Eigen::Matrix3d& metric) {
  const Eigen::Vector3d md = metric * d.transpose();
  const double norm = md.norm();
  if (norm < kZeroDirection) return Eigen::RowVector3d::Zero();
  return (md / norm).transpose();
}

}  // namespace

Eigen::RowVectorXd sinusoidal_embedding(const Eigen::RowVector3d& d, int n_freq) {
  Eigen::RowVectorXd out(6 * n_freq);
  for (int axis = 0; axis < 3; ++axis) {
    const double x = geometry::wrap_displacement(d[axis]);
    for (int k = 0; k < n_freq; ++k) {
      const double arg = kTwoPi * (k + 1) * x;
      out[axis * 2 * n_freq + k] = std::sin(arg);
      out[axis * 2 * n_freq + n_freq + k] = std::cos(arg);
    }
  }
  return out;
}

EdgeFeatures edge_features(const Eigen::MatrixXd& fi, const Eigen::VectorXd& wi,
                           const Eigen::MatrixXd& fj, const Eigen::VectorXd& wj,
                           const Eigen::Matrix3d& metric, EdgeMode mode, int n_freq) {
  const int order = static_cast<int>(wi.size());
  const int emb = 6 * n_freq;
  EdgeFeatures e;
  if (mode == EdgeMode::Concat) {
    e.dist = Eigen::RowVectorXd::Zero(order * order * emb);
    e.dir = Eigen::RowVectorXd::Zero(order * order * 3);
  } else {
    e.dist = Eigen::RowVectorXd::Zero(emb);
    e.dir = Eigen::RowVectorXd::Zero(3);
  }
  for (int a = 0; a < order; ++a) {
    for (int b = 0; b < order; ++b) {
      const double weight = wi[a] * wj[b];
      const int block = a * order + b;
      if (weight == 0.0) continue;
      Eigen::RowVector3d d;
      for (int k = 0; k < 3; ++k) d[k] = geometry::wrap_displacement(fj(b, k) - fi(a, k));
      const Eigen::RowVectorXd dist = weight * sinusoidal_embedding(d, n_freq);
      const Eigen::RowVector3d dir = weight * direction(d, metric);
      if (mode == EdgeMode::Concat) {
        e.dist.segment(block * emb, emb) = dist;
        e.dir.segment(block * 3, 3) = dir;
      } else {
        e.dist += dist;
        e.dir += dir;
      }
    }
  }
  return e;
}

int edge_feature_dim(EdgeMode mode, int order, int n_freq) {
  const int blocks = mode == EdgeMode::Concat ? order * order : 1;
  return blocks * (6 * n_freq + 3);
}

Eigen::RowVectorXd time_embedding(double t, int time_dim) {
  const int half = time_dim / 2;
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(time_dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(std::log(1000.0) * k / std::max(half, 1));
    out[k] = std::sin(t * freq);
    out[half + k] = std::cos(t * freq);
  }
  return out;
}

VelocityNet::VelocityNet(NetConfig config) : config_(config) {
  const NetConfig& c = config_;
  if (c.vocab_size < 1 || c.order < 1 || c.hidden_dim < 1 || c.num_layers < 0 ||
      c.n_freq < 1 || c.time_dim < 2 || c.max_sites < 1) {
    throw UsageError("invalid network configuration");
  }
  const int h = c.hidden_dim;
  add_linear("prob", 0, c.vocab_size, h);
  add_linear("prob", 1, h, h);
  add_linear("time", 0, c.time_dim, h);
  add_linear("time", 1, h, h);
  add_linear("init", 0, 2 * h, h);
  add_linear("init", 1, h, h);
  params_.add("atom_count.table", Matrix::Zero(c.max_sites, h));
  const int edge_dim = edge_feature_dim(c.edge_mode(), c.order, c.n_freq);
  for (int k = 0; k < c.num_layers; ++k) {
    const std::string p = "layer" + std::to_string(k);
    params_.add(p + ".message.src", Matrix::Zero(h, h));
    params_.add(p + ".message.dst", Matrix::Zero(h, h));
    params_.add(p + ".message.lattice", Matrix::Zero(6, h));
    params_.add(p + ".message.count", Matrix::Zero(h, h));
    add_linear(p + ".message.edge", 0, edge_dim, h);
    add_linear(p + ".message", 1, h, h);
    add_linear(p + ".update", 0, 2 * h, h);
    add_linear(p + ".update", 1, h, h);
  }
  const int heads_out[] = {3, 3 * (c.order - 1), c.vocab_size, c.order, 6};
  const char* heads[] = {"head.f", "head.fp", "head.s", "head.w", "head.lattice"};
  for (int i = 0; i < 5; ++i) {
    if (heads_out[i] == 0) continue;
    const std::string p = heads[i];
    add_linear(p, 0, h, h);
    add_linear(p, 1, h, heads_out[i]);
    zero_init_.push_back(*params_.find(p + ".1.weight"));
    zero_init_.push_back(*params_.find(p + ".1.bias"));
  }
}

void VelocityNet::add_linear(const std::string& prefix, int layer, int in, int out) {
  const std::string base = prefix + "." + std::to_string(layer);
  params_.add(base + ".weight", Matrix::Zero(in, out));
  params_.add(base + ".bias", Matrix::Zero(1, out));
}

void VelocityNet::randomize(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int p = 0; p < params_.size(); ++p) {
    Matrix& m = params_.value(p);
    const std::string& name = params_.name(p);
    if (name == "atom_count.table") {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
      continue;
    }
    // Weights are (in x out); a bias shares the fan-in of its weight.
    Eigen::Index fan_in = m.rows();
    if (name.find(".message.edge.0.") != std::string::npos || name.ends_with(".src") ||
        name.ends_with(".dst") || name.ends_with(".lattice") || name.ends_with(".count")) {
      // Blocks of the first message layer share the fan-in of the full input.
      fan_in = 3 * config_.hidden_dim + 6 +
               edge_feature_dim(config_.edge_mode(), config_.order, config_.n_freq);
    } else if (name.ends_with(".bias")) {
      const std::string weight = name.substr(0, name.size() - 5) + ".weight";
      fan_in = params_.value(*params_.find(weight)).rows();
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng);
  }
}

void VelocityNet::initialize(std::mt19937_64& rng) {
  randomize(rng);
  for (int p : zero_init_) params_.value(p).setZero();
}

Var VelocityNet::param(Tape& tape, const std::string& name) const {
  const auto index = params_.find(name);
  if (!index) throw UsageError("missing parameter: " + name);
  return tape.parameter(params_, *index);
}

Var VelocityNet::mlp2(Tape& tape, const Var& x, const std::string& prefix) const {
  Var hidden = ad::silu(ad::linear(x, param(tape, prefix + ".0.weight"),
                                   param(tape, prefix + ".0.bias")));
  return ad::linear(hidden, param(tape, prefix + ".1.weight"), param(tape, prefix + ".1.bias"));
}

Var VelocityNet::node_init(Tape& tape, const Eigen::MatrixXd& s,
                           const Eigen::MatrixXd& time_features) const {
  tape.set_scope("node initialization");
  const Var prob = mlp2(tape, tape.constant(s), "prob");
  const Var time = mlp2(tape, tape.constant(time_features), "time");
  return mlp2(tape, ad::concat_cols({prob, time}), "init");
}

Eigen::MatrixXd VelocityNet::node_features(const Eigen::MatrixXd& s,
                                           std::span<const double> times) const {
  if (static_cast<std::size_t>(s.rows()) != times.size()) {
    throw UsageError("node_features: one time per row required");
  }
  Eigen::MatrixXd tf(s.rows(), config_.time_dim);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    tf.row(i) = time_embedding(times[static_cast<std::size_t>(i)], config_.time_dim);
  }
  Tape tape(false);
  return node_init(tape, s, tf).value();
}

NetOutputs VelocityNet::forward(Tape& tape, std::span<const FlowState> states,
                                std::span<const double> times) const {
  const NetConfig& c = config_;
  if (states.size() != times.size()) throw UsageError("forward: one time per graph required");
  if (states.empty()) throw UsageError("forward: empty batch");
  const int n_graphs = static_cast<int>(states.size());
  const int input_order = states.front().order();

  int n_nodes = 0;
  for (const FlowState& st : states) {
    if (st.num_sites() < 1) throw DataError("forward: graph without sites");
    if (st.num_sites() > c.max_sites) {
      throw DataError("forward: " + std::to_string(st.num_sites()) +
                      " sites exceeds the atom-count embedding range " +
                      std::to_string(c.max_sites));
    }
    if (st.vocab_size() != c.vocab_size) throw DataError("forward: vocabulary size mismatch");
    if (st.order() != input_order || st.order() > c.order || st.order() < 1) {
      throw DataError("forward: positional order incompatible with the model");
    }
    n_nodes += st.num_sites();
  }

  // Constant inputs: node rows, edge lists and geometric edge features.
  Eigen::MatrixXd s_all(n_nodes, c.vocab_size);
  Eigen::MatrixXd w_all(n_nodes, c.order);
  Eigen::MatrixXd time_all(n_nodes, c.time_dim);
  Eigen::MatrixXd lattice_all(n_graphs, 6);
  std::vector<int> node_graph, src, dst, edge_graph, count_index;
  std::vector<Eigen::RowVectorXd> edge_rows;
  const int edge_dim = edge_feature_dim(c.edge_mode(), c.order, c.n_freq);

  int offset = 0;
  for (int g = 0; g < n_graphs; ++g) {
    const FlowState& st = states[static_cast<std::size_t>(g)];
    const int n = st.num_sites();
    const Eigen::RowVectorXd tf = time_embedding(times[static_cast<std::size_t>(g)], c.time_dim);
    lattice_all.row(g) = st.lattice.transpose();
    count_index.push_back(n - 1);
    const Eigen::Matrix3d metric =
        geometry::metric_tensor(geometry::unconstrained_to_lattice(st.lattice));
    std::vector<Eigen::MatrixXd> f(static_cast<std::size_t>(n));
    std::vector<Eigen::VectorXd> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      f[static_cast<std::size_t>(i)] = site_coords(st, i, c.order);
      w[static_cast<std::size_t>(i)] = site_weights(st, i, c.order);
      s_all.row(offset + i) = st.s.row(i);
      w_all.row(offset + i) = w[static_cast<std::size_t>(i)].transpose();
      time_all.row(offset + i) = tf;
      node_graph.push_back(g);
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
        const EdgeFeatures e =
            edge_features(f[ui], w[ui], f[uj], w[uj], metric, c.edge_mode(), c.n_freq);
        Eigen::RowVectorXd row(edge_dim);
        row << e.dist, e.dir;
        edge_rows.push_back(std::move(row));
        src.push_back(offset + i);
        dst.push_back(offset + j);
        edge_graph.push_back(g);
      }
    }
    offset += n;
  }
  Eigen::MatrixXd edge_all(static_cast<Eigen::Index>(edge_rows.size()), edge_dim);
  for (std::size_t e = 0; e < edge_rows.size(); ++e) {
    edge_all.row(static_cast<Eigen::Index>(e)) = edge_rows[e];
  }

  const auto src_ix = make_index(std::move(src));
  const auto dst_ix = make_index(std::move(dst));
  const auto edge_graph_ix = make_index(std::move(edge_graph));
  const auto node_graph_ix = make_index(std::move(node_graph));
  const auto count_ix = make_index(std::move(count_index));

  Var h = node_init(tape, s_all, time_all);
  const Var lattice_in = tape.constant(lattice_all);
  const Var edge_in = tape.constant(std::move(edge_all));
  const Var count_emb = ad::gather_rows(param(tape, "atom_count.table"), count_ix);

  for (int k = 0; k < c.num_layers; ++k) {
    const std::string p = "layer" + std::to_string(k);
    tape.set_scope("message passing layer " + std::to_string(k));
    // First message layer applied blockwise to [h_i, h_j, l~, e, z(N)]; node and
    // graph blocks are projected before being broadcast to edges.
    const Var from_src = ad::matmul(h, param(tape, p + ".message.src"));
    const Var from_dst = ad::matmul(h, param(tape, p + ".message.dst"));
    const Var per_graph = ad::add(ad::matmul(lattice_in, param(tape, p + ".message.lattice")),
                                  ad::matmul(count_emb, param(tape, p + ".message.count")));
    const Var from_edge = ad::linear(edge_in, param(tape, p + ".message.edge.0.weight"),
                                     param(tape, p + ".message.edge.0.bias"));
    Var pre = ad::add(ad::gather_rows(from_src, src_ix), ad::gather_rows(from_dst, dst_ix));
    pre = ad::add(pre, ad::add(from_edge, ad::gather_rows(per_graph, edge_graph_ix)));
    const Var message =
        ad::silu(ad::linear(ad::silu(pre), param(tape, p + ".message.1.weight"),
                            param(tape, p + ".message.1.bias")));
    const Var aggregated = ad::segment_sum(message, src_ix, n_nodes);
    h = ad::add(h, mlp2(tape, ad::concat_cols({h, aggregated}), p + ".update"));
  }

  tape.set_scope("output heads");
  NetOutputs out;
  std::vector<Var> coord_parts{mlp2(tape, h, "head.f")};
  if (c.order > 1) coord_parts.push_back(mlp2(tape, h, "head.fp"));
  // Channels with exactly zero weight carry no position and keep zero weight.
  const Eigen::MatrixXd active = (w_all.array() > 0.0).cast<double>().matrix();
  Eigen::MatrixXd coord_mask(n_nodes, 3 * c.order);
  for (int l = 0; l < c.order; ++l) coord_mask.middleCols(3 * l, 3) = active.col(l).replicate(1, 3);
  Var coords = ad::mul(ad::concat_cols(coord_parts), tape.constant(std::move(coord_mask)));
  out.coords = input_order == c.order ? coords : ad::slice_cols(coords, 0, 3 * input_order);

  const Eigen::MatrixXd s_sphere = s_all.cwiseMax(0.0).cwiseSqrt();
  out.s = ad::project_rows(mlp2(tape, h, "head.s"), s_sphere);
  const Eigen::MatrixXd w_sphere = w_all.cwiseMax(0.0).cwiseSqrt();
  Var w = ad::mul(ad::project_rows(mlp2(tape, h, "head.w"), w_sphere), tape.constant(active));
  out.w = input_order == c.order ? w : ad::slice_cols(w, 0, input_order);

  const Var pooled = ad::segment_mean(h, node_graph_ix, n_graphs);
  out.lattice = mlp2(tape, pooled, "head.lattice");
  tape.set_scope("");
  return out;
}

std::vector<VelocityBundle> VelocityNet::evaluate(std::span<const FlowState> states,
                                                  std::span<const double> times) const {
  Tape tape(false);
  const NetOutputs out = forward(tape, states, times);
  std::vector<VelocityBundle> bundles;
  bundles.reserve(states.size());
  Eigen::Index row = 0;
  for (std::size_t g = 0; g < states.size(); ++g) {
    const Eigen::Index n = states[g].num_sites();
    VelocityBundle v;
    v.lattice = out.lattice.value().row(static_cast<Eigen::Index>(g)).transpose();
    v.coords = out.coords.value().middleRows(row, n);
    v.s = out.s.value().middleRows(row, n);
    v.w = out.w.value().middleRows(row, n);
    bundles.push_back(std::move(v));
    row += n;
  }
  return bundles;
}

VelocityBundle VelocityNet::evaluate(const FlowState& state, double t) const {
  const double times[] = {t};
  return evaluate(std::span<const FlowState>(&state, 1), times).front();
}

std::uint64_t VelocityNet::checksum() const {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&hash](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      hash ^= p[i];
      hash *= 1099511628211ULL;
    }
  };
  for (int p = 0; p < params_.size(); ++p) {
    mix(params_.name(p).data(), params_.name(p).size());
    const Matrix& m = params_.value(p);
    mix(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  return hash;
}

}  // namespace dflow
