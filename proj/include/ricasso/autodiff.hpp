/*
 * Copyright 2026 The ricasso authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef RICASSO_AUTODIFF_HPP_
#define RICASSO_AUTODIFF_HPP_

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <vector>

namespace ricasso::ad {

// Reverse-mode automatic differentiation over dense double matrices.
// A Var is a handle to a graph node; ops build the graph eagerly and
// backward() propagates gradients from a scalar (1x1) output.
//
// detach() cuts the graph: the result is a constant snapshot of the value
// and receives no gradient. This is the stop-gradient primitive.

struct Node {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents.
  std::function<void(const Node&)> backprop;

  void accumulate(const Eigen::MatrixXd& g) {
    if (grad.size() == 0) grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    grad += g;
  }
};

class Var {
 public:
  Var() = default;

  static Var constant(Eigen::MatrixXd v);
  static Var constant(double v);  // 1x1
  static Var leaf(Eigen::MatrixXd v);  // requires_grad = true

  bool valid() const { return node_ != nullptr; }
  const Eigen::MatrixXd& value() const { return node_->value; }
  Eigen::MatrixXd& mutable_value() { return node_->value; }
  const Eigen::MatrixXd& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const;  // value of a 1x1 node

  void zero_grad() { if (node_) node_->grad.resize(0, 0); }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
  friend Var make_node(Eigen::MatrixXd value, std::vector<Var> parents,
                       std::function<void(const Node&)> backprop);
};

// Internal: builds a node; requires_grad is inherited from parents.
Var make_node(Eigen::MatrixXd value, std::vector<Var> parents,
              std::function<void(const Node&)> backprop);

// Runs reverse-mode accumulation from a scalar root. Gradients of all
// reachable nodes with requires_grad are accumulated into node->grad.
void backward(const Var& root);

// --- elementwise / arithmetic ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);   // elementwise
Var div(const Var& a, const Var& b);   // elementwise
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var clamp_min(const Var& a, double lo);  // zero gradient where a < lo
Var clamp_max(const Var& a, double hi);

// --- linear algebra / shape ---
Var matmul(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& r);   // (B,C) + (1,C)
Var mul_colvec(const Var& a, const Var& c);   // (B,C) * (B,1) broadcast
Var scale(const Var& a, const Var& s);        // a * s, s is 1x1
Var vcat(const std::vector<Var>& parts);      // stack rows
Var slice_rows(const Var& a, Eigen::Index row0, Eigen::Index nrows);
Var gather_rows(const Var& a, const std::vector<int>& idx);

// --- reductions ---
Var sum(const Var& a);       // 1x1
Var mean_all(const Var& a);  // 1x1
Var row_sum(const Var& a);   // (B,1)
Var col_sum(const Var& a);   // (1,C)

// --- rowwise softmax family (numerically stable) ---
Var logsumexp_rows(const Var& a);   // (B,1)
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

// --- graph control ---
Var detach(const Var& a);

// Convenience composites.
Var row_squared_norm(const Var& a);            // (B,1), sum of squares per row
Var normalize_rows(const Var& a);              // unit L2 rows; rejects zero rows
Var cosine_rows(const Var& a, const Var& b);   // (B,1)

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return mul_scalar(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace ricasso::ad

#endif  // RICASSO_AUTODIFF_HPP_
