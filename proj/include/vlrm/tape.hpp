#pragma once

// Reverse-mode differentiation over dense matrices. Parameters enter a tape
// as tracked leaves only when their partition is listed as trainable; all
// other parameters are constants, so their gradients are never accumulated.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "vlrm/error.hpp"

namespace vlrm {

using Matrix = Eigen::MatrixXd;

enum class Partition { generative, frozen_core, value_adapter, value_head };

inline const char* partition_name(Partition p) {
  switch (p) {
    case Partition::generative: return "generative";
    case Partition::frozen_core: return "frozen_core";
    case Partition::value_adapter: return "value_adapter";
    case Partition::value_head: return "value_head";
  }
  return "?";
}

inline Partition parse_partition(const std::string& s) {
  for (Partition p : {Partition::generative, Partition::frozen_core, Partition::value_adapter, Partition::value_head})
    if (s == partition_name(p)) return p;
  throw ConfigError("unknown partition '" + s + "'");
}

struct Parameter {
  std::string name;
  Partition partition;
  Matrix value;
};

class GradTape {
 public:
  struct Var {
    int id = -1;
  };

  explicit GradTape(std::set<Partition> trainable = {}) : trainable_(std::move(trainable)) {}

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  bool trainable(Partition p) const { return trainable_.count(p) != 0; }

  Var constant(Matrix v) { return push(std::move(v), false, nullptr); }

  /// Leaf for a parameter; repeated calls return the same node.
  Var param(const Parameter& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return Var{it->second};
    Var v = push(p.value, trainable(p.partition), nullptr);
    leaves_.emplace(&p, v.id);
    return v;
  }

  /// Same value, no gradient flows back through it.
  Var stop_gradient(Var v) { return constant(value(v)); }

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool needs_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    check(value(a).cols() == value(b).rows(), "matmul shape mismatch");
    return push(value(a) * value(b), any(a, b), [a, b](GradTape& t, const Matrix& g) {
      t.accumulate(a, g * t.value(b).transpose());
      t.accumulate(b, t.value(a).transpose() * g);
    });
  }

  Var add(Var a, Var b) {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add shape mismatch");
    return push(value(a) + value(b), any(a, b), [a, b](GradTape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  /// a (R x C) + row (1 x C) broadcast over rows.
  Var add_row(Var a, Var row) {
    check(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row shape mismatch");
    Matrix out = value(a);
    out.rowwise() += value(row).row(0);
    return push(std::move(out), any(a, row), [a, row](GradTape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(row, g.colwise().sum());
    });
  }

  Var scale(Var a, double s) {
    return push(value(a) * s, needs_grad(a), [a, s](GradTape& t, const Matrix& g) { t.accumulate(a, g * s); });
  }

  Var tanh(Var a) {
    Matrix out = value(a).array().tanh().matrix();
    const int self = static_cast<int>(nodes_.size());
    return push(std::move(out), needs_grad(a), [a, self](GradTape& t, const Matrix& g) {
      const Matrix& y = t.nodes_[static_cast<std::size_t>(self)].value;
      t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
    });
  }

  /// Rows `ids` of `table`; negative ids yield zero rows.
  Var gather_rows(Var table, const std::vector<int>& ids) {
    const Matrix& tv = value(table);
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0) continue;
      check(ids[i] < tv.rows(), "gather index out of range");
      out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    }
    return push(std::move(out), needs_grad(table), [table, ids](GradTape& t, const Matrix& g) {
      Matrix acc = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
      for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] >= 0) acc.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
      t.accumulate(table, acc);
    });
  }

  /// Per row i, softmax(logits_i)[target_i] (or its log) as a B x 1 column.
  /// Rows with a negative target produce 0 and receive no gradient.
  Var token_prob(Var logits, const std::vector<int>& targets, bool log_space) {
    const Matrix& z = value(logits);
    check(static_cast<Eigen::Index>(targets.size()) == z.rows(), "token_prob target count mismatch");
    Matrix probs(z.rows(), z.cols());
    Matrix out = Matrix::Zero(z.rows(), 1);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double mx = z.row(i).maxCoeff();
      Eigen::RowVectorXd e = (z.row(i).array() - mx).exp();
      const double s = e.sum();
      probs.row(i) = e / s;
      const int tgt = targets[static_cast<std::size_t>(i)];
      if (tgt < 0) continue;
      check(tgt < z.cols(), "token_prob target out of range");
      out(i, 0) = log_space ? (z(i, tgt) - mx) - std::log(s) : probs(i, tgt);
    }
    return push(std::move(out), needs_grad(logits),
                [logits, targets, probs, log_space](GradTape& t, const Matrix& g) {
                  Matrix dz = Matrix::Zero(probs.rows(), probs.cols());
                  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                    const int tgt = targets[static_cast<std::size_t>(i)];
                    if (tgt < 0 || g(i, 0) == 0.0) continue;
                    // d log p_t / dz = onehot(t) - p ; d p_t / dz = p_t (onehot(t) - p)
                    Eigen::RowVectorXd d = -probs.row(i);
                    d(tgt) += 1.0;
                    if (!log_space) d *= probs(i, tgt);
                    dz.row(i) = g(i, 0) * d;
                  }
                  t.accumulate(logits, dz);
                });
  }

  /// Scalar sum(w .* a) with constant weights.
  Var weighted_sum(Var a, const Matrix& w) {
    check(w.rows() == value(a).rows() && w.cols() == value(a).cols(), "weighted_sum shape mismatch");
    Matrix out(1, 1);
    out(0, 0) = (value(a).array() * w.array()).sum();
    return push(std::move(out), needs_grad(a), [a, w](GradTape& t, const Matrix& g) { t.accumulate(a, w * g(0, 0)); });
  }

  /// Scalar sum(w .* (a - target)^2) with constant target and weights.
  Var weighted_sq_error(Var a, const Matrix& target, const Matrix& w) {
    check(target.rows() == value(a).rows() && target.cols() == value(a).cols(), "sq_error target shape mismatch");
    check(w.rows() == value(a).rows() && w.cols() == value(a).cols(), "sq_error weight shape mismatch");
    Matrix diff = value(a) - target;
    Matrix out(1, 1);
    out(0, 0) = (w.array() * diff.array().square()).sum();
    return push(std::move(out), needs_grad(a), [a, diff, w](GradTape& t, const Matrix& g) {
      t.accumulate(a, (2.0 * g(0, 0) * w.array() * diff.array()).matrix());
    });
  }

  /// Back-propagates from a 1 x 1 root.
  void backward(Var root) {
    check(value(root).rows() == 1 && value(root).cols() == 1, "backward root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!needs_grad(root)) return;
    nodes_[static_cast<std::size_t>(root.id)].grad = Matrix::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
      n.back(*this, n.grad);
    }
  }

  /// Accumulated gradient of a parameter; zeros when it was not tracked.
  Matrix gradient(const Parameter& p) const {
    auto it = leaves_.find(&p);
    if (it == leaves_.end()) return Matrix::Zero(p.value.rows(), p.value.cols());
    const auto& n = nodes_[static_cast<std::size_t>(it->second)];
    if (!n.needs_grad || n.grad.size() == 0) return Matrix::Zero(p.value.rows(), p.value.cols());
    return n.grad;
  }

 private:
  using Backward = std::function<void(GradTape&, const Matrix&)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward back;
  };

  static void check(bool ok, const char* what) {
    if (!ok) throw ContractError(what);
  }

  bool any(Var a, Var b) const { return needs_grad(a) || needs_grad(b); }

  Var push(Matrix v, bool needs_grad, Backward back) {
    nodes_.push_back(Node{std::move(v), Matrix(), needs_grad, needs_grad ? std::move(back) : Backward()});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accumulate(Var v, const Matrix& g) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  std::set<Partition> trainable_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> leaves_;
};

}  // namespace vlrm
