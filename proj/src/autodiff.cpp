#include "dflow/autodiff.hpp"

#include <cmath>

#include "dflow/error.hpp"

namespace dflow::ad {

int ParameterSet::add(std::string name, Matrix value) {
  if (find(name)) throw UsageError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return size() - 1;
}

std::optional<int> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

Eigen::Index ParameterSet::total_size() const {
  Eigen::Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Eigen::VectorXd ParameterSet::flatten() const {
  Eigen::VectorXd flat(total_size());
  Eigen::Index offset = 0;
  for (const auto& v : values_) {
    flat.segment(offset, v.size()) = v.reshaped();
    offset += v.size();
  }
  return flat;
}

void ParameterSet::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != total_size()) throw UsageError("unflatten: size mismatch");
  Eigen::Index offset = 0;
  for (auto& v : values_) {
    v.reshaped() = flat.segment(offset, v.size());
    offset += v.size();
  }
}

Gradients zero_gradients(const ParameterSet& params) {
  Gradients g;
  g.reserve(static_cast<std::size_t>(params.size()));
  for (int i = 0; i < params.size(); ++i) {
    g.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
  return g;
}

void add_gradients(Gradients& into, const Gradients& other) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += other[i];
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::push(Matrix value, std::string_view op, bool requires_grad,
               BackwardFn backward) {
  const int id = static_cast<int>(nodes_.size());
  if (!value.allFinite()) {
    throw NumericalError("non-finite value produced by '" + std::string(op) +
                         "' at node " + std::to_string(id) +
                         (scope_.empty() ? "" : " in " + scope_));
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = track_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

Var Tape::constant(Matrix value) { return push(std::move(value), "constant", false, {}); }

Var Tape::parameter(const ParameterSet& params, int index) {
  if (param_nodes_.size() < static_cast<std::size_t>(params.size())) {
    param_nodes_.resize(static_cast<std::size_t>(params.size()), -1);
  }
  int& slot = param_nodes_[static_cast<std::size_t>(index)];
  if (slot >= 0) return Var(this, slot);
  Var v = push(params.value(index), params.name(index), true, {});
  nodes_.back().param_index = index;
  slot = v.id();
  return v;
}

Var Tape::record(Matrix value, std::string_view op, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || requires_grad(in.id());
  return push(std::move(value), op, needs, std::move(backward));
}

Var Tape::record(Matrix value, std::string_view op, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || requires_grad(in.id());
  return push(std::move(value), op, needs, std::move(backward));
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw UsageError("backward: loss must be a 1 x 1 node");
  }
  if (!track_) throw UsageError("backward: tape was created without gradient tracking");
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.has_grad || !node.backward) continue;
    node.backward(*this, node.grad);
  }
}

Gradients Tape::parameter_gradients(const ParameterSet& params) const {
  Gradients grads = zero_gradients(params);
  for (std::size_t p = 0; p < param_nodes_.size(); ++p) {
    const int id = param_nodes_[p];
    if (id < 0) continue;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.has_grad) grads[p] = node.grad;
  }
  return grads;
}

// ---- operators --------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), "matmul", {a, b},
                  [ia, ib](Tape& tape, const Matrix& g) {
                    if (tape.requires_grad(ia)) tape.accumulate(ia, g * tape.value(ib).transpose());
                    if (tape.requires_grad(ib)) tape.accumulate(ib, tape.value(ia).transpose() * g);
                  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tape& t = *x.tape();
  Matrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  return t.record(std::move(out), "linear", {x, weight, bias},
                  [ix, iw, ib](Tape& tape, const Matrix& g) {
                    if (tape.requires_grad(ix)) tape.accumulate(ix, g * tape.value(iw).transpose());
                    if (tape.requires_grad(iw)) tape.accumulate(iw, tape.value(ix).transpose() * g);
                    if (tape.requires_grad(ib)) tape.accumulate(ib, g.colwise().sum());
                  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), "add", {a, b},
                  [ia, ib](Tape& tape, const Matrix& g) {
                    tape.accumulate(ia, g);
                    tape.accumulate(ib, g);
                  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), "sub", {a, b},
                  [ia, ib](Tape& tape, const Matrix& g) {
                    tape.accumulate(ia, g);
                    tape.accumulate(ib, -g);
                  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), "mul", {a, b},
                  [ia, ib](Tape& tape, const Matrix& g) {
                    if (tape.requires_grad(ia)) tape.accumulate(ia, g.cwiseProduct(tape.value(ib)));
                    if (tape.requires_grad(ib)) tape.accumulate(ib, g.cwiseProduct(tape.value(ia)));
                  });
}

Var scale(const Var& a, double factor) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value() * factor, "scale", {a},
                  [ia, factor](Tape& tape, const Matrix& g) { tape.accumulate(ia, g * factor); });
}

Var silu(const Var& a) {
  Tape& t = *a.tape();
  const Matrix sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Matrix out = a.value().cwiseProduct(sig);
  const int ia = a.id();
  return t.record(std::move(out), "silu", {a},
                  [ia, sig](Tape& tape, const Matrix& g) {
                    const auto& x = tape.value(ia).array();
                    const auto s = sig.array();
                    tape.accumulate(ia, (g.array() * s * (1.0 + x * (1.0 - s))).matrix());
                  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw UsageError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;  // (id, width)
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id(), p.cols());
    offset += p.cols();
  }
  return t.record(std::move(out), "concat_cols", parts,
                  [layout = std::move(layout)](Tape& tape, const Matrix& g) {
                    Eigen::Index off = 0;
                    for (const auto& [id, width] : layout) {
                      if (tape.requires_grad(id)) tape.accumulate(id, g.middleCols(off, width));
                      off += width;
                    }
                  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw UsageError("slice_cols: range out of bounds");
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t.record(a.value().middleCols(start, count), "slice_cols", {a},
                  [ia, rows, cols, start, count](Tape& tape, const Matrix& g) {
                    Matrix ga = Matrix::Zero(rows, cols);
                    ga.middleCols(start, count) = g;
                    tape.accumulate(ia, ga);
                  });
}

Var gather_rows(const Var& a, IndexList index) {
  Tape& t = *a.tape();
  const auto& idx = *index;
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = a.value().row(idx[r]);
  const int ia = a.id();
  const Eigen::Index src_rows = a.rows();
  return t.record(std::move(out), "gather_rows", {a},
                  [ia, index, src_rows](Tape& tape, const Matrix& g) {
                    Matrix ga = Matrix::Zero(src_rows, g.cols());
                    const auto& ix = *index;
                    for (std::size_t r = 0; r < ix.size(); ++r) ga.row(ix[r]) += g.row(static_cast<Eigen::Index>(r));
                    tape.accumulate(ia, ga);
                  });
}

Var segment_sum(const Var& a, IndexList segment, int n_segments) {
  Tape& t = *a.tape();
  const auto& seg = *segment;
  Matrix out = Matrix::Zero(n_segments, a.cols());
  for (std::size_t r = 0; r < seg.size(); ++r) out.row(seg[r]) += a.value().row(static_cast<Eigen::Index>(r));
  const int ia = a.id();
  return t.record(std::move(out), "segment_sum", {a},
                  [ia, segment](Tape& tape, const Matrix& g) {
                    const auto& sg = *segment;
                    Matrix ga(static_cast<Eigen::Index>(sg.size()), g.cols());
                    for (std::size_t r = 0; r < sg.size(); ++r) ga.row(static_cast<Eigen::Index>(r)) = g.row(sg[r]);
                    tape.accumulate(ia, ga);
                  });
}

Var segment_mean(const Var& a, IndexList segment, int n_segments) {
  Tape& t = *a.tape();
  const auto& seg = *segment;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_segments);
  for (int s : seg) counts[s] += 1.0;
  Matrix out = Matrix::Zero(n_segments, a.cols());
  for (std::size_t r = 0; r < seg.size(); ++r) out.row(seg[r]) += a.value().row(static_cast<Eigen::Index>(r));
  for (int s = 0; s < n_segments; ++s) {
    if (counts[s] > 0.0) out.row(s) /= counts[s];
  }
  const int ia = a.id();
  return t.record(std::move(out), "segment_mean", {a},
                  [ia, segment, counts](Tape& tape, const Matrix& g) {
                    const auto& sg = *segment;
                    Matrix ga(static_cast<Eigen::Index>(sg.size()), g.cols());
                    for (std::size_t r = 0; r < sg.size(); ++r) {
                      ga.row(static_cast<Eigen::Index>(r)) = g.row(sg[r]) / counts[sg[r]];
                    }
                    tape.accumulate(ia, ga);
                  });
}

Var project_rows(const Var& v, const Matrix& x) {
  Tape& t = *v.tape();
  const Eigen::VectorXd dots = v.value().cwiseProduct(x).rowwise().sum();
  Matrix out = v.value() - x.cwiseProduct(dots.replicate(1, x.cols()));
  const int iv = v.id();
  return t.record(std::move(out), "project_rows", {v},
                  [iv, x](Tape& tape, const Matrix& g) {
                    const Eigen::VectorXd gd = g.cwiseProduct(x).rowwise().sum();
                    tape.accumulate(iv, g - x.cwiseProduct(gd.replicate(1, x.cols())));
                  });
}

Var weighted_square_error(const Var& a, const Matrix& target, const Matrix& weights) {
  Tape& t = *a.tape();
  Matrix diff = a.value() - target;
  Matrix out(1, 1);
  out(0, 0) = (weights.array() * diff.array().square()).sum();
  const int ia = a.id();
  return t.record(std::move(out), "weighted_square_error", {a},
                  [ia, diff = std::move(diff), weights](Tape& tape, const Matrix& g) {
                    tape.accumulate(ia, (2.0 * g(0, 0)) * weights.cwiseProduct(diff));
                  });
}

Var sum_all(const Var& a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return t.record(std::move(out), "sum_all", {a},
                  [ia, r, c](Tape& tape, const Matrix& g) {
                    tape.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                  });
}

}  // namespace dflow::ad
