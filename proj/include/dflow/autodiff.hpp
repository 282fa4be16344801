#pragma once

#include <Eigen/Core>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

/// Tape-based reverse-mode differentiation over dense matrices.
///
/// Every node holds a matrix value. Nodes that (transitively) depend on a
/// parameter leaf carry a gradient buffer; constants never do, so the reverse
/// sweep touches only the parameter-dependent part of the graph.
namespace dflow::ad {

using Matrix = Eigen::MatrixXd;
using IndexList = std::shared_ptr<const std::vector<int>>;

/// Named, ordered collection of parameter matrices.
class ParameterSet {
 public:
  int add(std::string name, Matrix value);

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  Matrix& value(int i) { return values_[static_cast<std::size_t>(i)]; }
  const Matrix& value(int i) const { return values_[static_cast<std::size_t>(i)]; }
  std::optional<int> find(std::string_view name) const;

  Eigen::Index total_size() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

/// Gradients aligned with a ParameterSet.
using Gradients = std::vector<Matrix>;

Gradients zero_gradients(const ParameterSet& params);
void add_gradients(Gradients& into, const Gradients& other);
double global_norm(const Gradients& grads);

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  /// With `track_gradients` false no backward closures are kept.
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to params.value(index). Binding the same index twice returns
  /// the same node.
  Var parameter(const ParameterSet& params, int index);

  /// Reverse sweep seeded with d(loss)/d(loss) = 1. `loss` must be 1 x 1.
  void backward(const Var& loss);
  Gradients parameter_gradients(const ParameterSet& params) const;

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Names the region of the graph being built; quoted in non-finite errors.
  void set_scope(std::string scope) { scope_ = std::move(scope); }

  // Used by the operator implementations.
  Var record(Matrix value, std::string_view op, std::initializer_list<Var> inputs,
             BackwardFn backward);
  Var record(Matrix value, std::string_view op, const std::vector<Var>& inputs,
             BackwardFn backward);
  bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) return;
    if (node.has_grad) {
      node.grad += g;
    } else {
      node.grad = g;
      node.has_grad = true;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
    int param_index = -1;
  };

  Var push(Matrix value, std::string_view op, bool requires_grad, BackwardFn backward);

  std::deque<Node> nodes_;
  std::vector<int> param_nodes_;
  std::string scope_;
  bool track_;
};

// ---- operators --------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// x W + b with b broadcast over rows.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var silu(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
/// Columns [start, start + count).
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// out.row(r) = a.row(index[r]).
Var gather_rows(const Var& a, IndexList index);
/// out.row(segment[r]) += a.row(r), n_segments rows.
Var segment_sum(const Var& a, IndexList segment, int n_segments);
Var segment_mean(const Var& a, IndexList segment, int n_segments);
/// Row-wise v - <v, x> x for a constant matrix x of unit rows.
Var project_rows(const Var& v, const Matrix& x);
/// sum(weights .* (a - target)^2) as a 1 x 1 node.
Var weighted_square_error(const Var& a, const Matrix& target, const Matrix& weights);
Var sum_all(const Var& a);

}  // namespace dflow::ad
