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

#include "ricasso/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace ricasso::ad {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var make_node(Eigen::MatrixXd value, std::vector<Var> parents,
              std::function<void(const Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->backprop = std::move(backprop);
    for (auto& p : parents) n->parents.push_back(p.node());
  }
  return Var(std::move(n));
}

Var Var::constant(Eigen::MatrixXd v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  return Var(std::move(n));
}

Var Var::constant(double v) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Var::leaf(Eigen::MatrixXd v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return Var(std::move(n));
}

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) throw std::logic_error("scalar(): node is not 1x1");
  return node_->value(0, 0);
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward: root must be scalar (1x1)");
  }
  if (!root.requires_grad()) return;

  // Topological order via iterative DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame { Node* n; size_t next_parent; };
  std::vector<Frame> stack;
  stack.push_back({root.node().get(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Node* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Eigen::MatrixXd::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Helper shortening op definitions.

namespace {

Var unary(const Var& a, Eigen::MatrixXd value,
          std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> dval) {
  auto an = a.node();
  return make_node(std::move(value), {a}, [an, dval](const Node& out) {
    if (an->requires_grad) an->accumulate(dval(out.grad));
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto an = a.node(), bn = b.node();
  return make_node(a.value() + b.value(), {a, b}, [an, bn](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad);
    if (bn->requires_grad) bn->accumulate(out.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto an = a.node(), bn = b.node();
  return make_node(a.value() - b.value(), {a, b}, [an, bn](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad);
    if (bn->requires_grad) bn->accumulate(-out.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  auto an = a.node(), bn = b.node();
  return make_node(a.value().cwiseProduct(b.value()), {a, b}, [an, bn](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(out.grad.cwiseProduct(an->value));
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  auto an = a.node(), bn = b.node();
  return make_node(a.value().cwiseQuotient(b.value()), {a, b}, [an, bn](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad.cwiseQuotient(bn->value));
    if (bn->requires_grad) {
      Eigen::MatrixXd g = -out.grad.cwiseProduct(an->value).cwiseQuotient(
          bn->value.cwiseProduct(bn->value));
      bn->accumulate(g);
    }
  });
}

Var neg(const Var& a) {
  return unary(a, -a.value(), [](const Eigen::MatrixXd& g) { return Eigen::MatrixXd(-g); });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, a.value().array() + s, [](const Eigen::MatrixXd& g) { return g; });
}

Var mul_scalar(const Var& a, double s) {
  return unary(a, a.value() * s,
               [s](const Eigen::MatrixXd& g) { return Eigen::MatrixXd(g * s); });
}

Var exp(const Var& a) {
  Eigen::MatrixXd v = a.value().array().exp();
  auto an = a.node();
  return make_node(v, {a}, [an, v](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad.cwiseProduct(v));
  });
}

Var log(const Var& a) {
  auto an = a.node();
  return make_node(a.value().array().log(), {a}, [an](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad.cwiseQuotient(an->value));
  });
}

Var sqrt(const Var& a) {
  Eigen::MatrixXd v = a.value().array().sqrt();
  auto an = a.node();
  return make_node(v, {a}, [an, v](const Node& out) {
    if (an->requires_grad) an->accumulate((out.grad.array() / (2.0 * v.array())).matrix());
  });
}

Var square(const Var& a) {
  auto an = a.node();
  return make_node(a.value().array().square(), {a}, [an](const Node& out) {
    if (an->requires_grad) an->accumulate(2.0 * out.grad.cwiseProduct(an->value));
  });
}

Var relu(const Var& a) {
  auto an = a.node();
  Eigen::MatrixXd v = a.value().cwiseMax(0.0);
  return make_node(v, {a}, [an](const Node& out) {
    if (an->requires_grad) {
      Eigen::MatrixXd mask = (an->value.array() > 0.0).cast<double>();
      an->accumulate(out.grad.cwiseProduct(mask));
    }
  });
}

Var tanh(const Var& a) {
  Eigen::MatrixXd v = a.value().array().tanh();
  auto an = a.node();
  return make_node(v, {a}, [an, v](const Node& out) {
    if (an->requires_grad) {
      an->accumulate((out.grad.array() * (1.0 - v.array().square())).matrix());
    }
  });
}

Var clamp_min(const Var& a, double lo) {
  auto an = a.node();
  return make_node(a.value().cwiseMax(lo), {a}, [an, lo](const Node& out) {
    if (an->requires_grad) {
      Eigen::MatrixXd mask = (an->value.array() > lo).cast<double>();
      an->accumulate(out.grad.cwiseProduct(mask));
    }
  });
}

Var clamp_max(const Var& a, double hi) {
  auto an = a.node();
  return make_node(a.value().cwiseMin(hi), {a}, [an, hi](const Node& out) {
    if (an->requires_grad) {
      Eigen::MatrixXd mask = (an->value.array() < hi).cast<double>();
      an->accumulate(out.grad.cwiseProduct(mask));
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims mismatch");
  auto an = a.node(), bn = b.node();
  return make_node(a.value() * b.value(), {a, b}, [an, bn](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * out.grad);
  });
}

Var add_rowvec(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) {
    throw std::invalid_argument("add_rowvec: r must be (1, cols(a))");
  }
  auto an = a.node(), rn = r.node();
  Eigen::MatrixXd v = a.value().rowwise() + r.value().row(0);
  return make_node(std::move(v), {a, r}, [an, rn](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad);
    if (rn->requires_grad) rn->accumulate(out.grad.colwise().sum());
  });
}

Var mul_colvec(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) {
    throw std::invalid_argument("mul_colvec: c must be (rows(a), 1)");
  }
  auto an = a.node(), cn = c.node();
  Eigen::MatrixXd v = a.value().array().colwise() * c.value().col(0).array();
  return make_node(std::move(v), {a, c}, [an, cn](const Node& out) {
    if (an->requires_grad) {
      an->accumulate((out.grad.array().colwise() * cn->value.col(0).array()).matrix());
    }
    if (cn->requires_grad) {
      cn->accumulate(out.grad.cwiseProduct(an->value).rowwise().sum());
    }
  });
}

Var scale(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("scale: s must be 1x1");
  auto an = a.node(), sn = s.node();
  return make_node(a.value() * s.value()(0, 0), {a, s}, [an, sn](const Node& out) {
    if (an->requires_grad) an->accumulate(out.grad * sn->value(0, 0));
    if (sn->requires_grad) {
      Eigen::MatrixXd g(1, 1);
      g(0, 0) = out.grad.cwiseProduct(an->value).sum();
      sn->accumulate(g);
    }
  });
}

Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vcat: empty");
  Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("vcat: column mismatch");
    rows += p.rows();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index r = 0;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    offsets.push_back(r);
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_node(std::move(v), parts, [nodes, offsets](const Node& out) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i]->requires_grad) {
        nodes[i]->accumulate(out.grad.middleRows(offsets[i], nodes[i]->value.rows()));
      }
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index row0, Eigen::Index nrows) {
  if (row0 < 0 || nrows < 0 || row0 + nrows > a.rows()) {
    throw std::invalid_argument("slice_rows: out of range");
  }
  auto an = a.node();
  return make_node(a.value().middleRows(row0, nrows), {a},
                   [an, row0, nrows](const Node& out) {
                     if (!an->requires_grad) return;
                     Eigen::MatrixXd g =
                         Eigen::MatrixXd::Zero(an->value.rows(), an->value.cols());
                     g.middleRows(row0, nrows) = out.grad;
                     an->accumulate(g);
                   });
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::invalid_argument("gather_rows: out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  auto an = a.node();
  return make_node(std::move(v), {a}, [an, idx](const Node& out) {
    if (!an->requires_grad) return;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(an->value.rows(), an->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += out.grad.row(static_cast<Eigen::Index>(i));
    }
    an->accumulate(g);
  });
}

Var sum(const Var& a) {
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = a.value().sum();
  auto an = a.node();
  return make_node(std::move(v), {a}, [an](const Node& out) {
    if (an->requires_grad) {
      an->accumulate(Eigen::MatrixXd::Constant(an->value.rows(), an->value.cols(),
                                               out.grad(0, 0)));
    }
  });
}

Var mean_all(const Var& a) {
  const double n = static_cast<double>(a.rows() * a.cols());
  return mul_scalar(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  auto an = a.node();
  Eigen::MatrixXd v = a.value().rowwise().sum();
  return make_node(std::move(v), {a}, [an](const Node& out) {
    if (an->requires_grad) {
      an->accumulate(out.grad.col(0).replicate(1, an->value.cols()));
    }
  });
}

Var col_sum(const Var& a) {
  auto an = a.node();
  Eigen::MatrixXd v = a.value().colwise().sum();
  return make_node(std::move(v), {a}, [an](const Node& out) {
    if (an->requires_grad) {
      an->accumulate(out.grad.row(0).replicate(an->value.rows(), 1));
    }
  });
}

Var logsumexp_rows(const Var& a) {
  const Eigen::MatrixXd& x = a.value();
  Eigen::VectorXd m = x.rowwise().maxCoeff();
  Eigen::MatrixXd shifted = (x.colwise() - m).array().exp();
  Eigen::VectorXd s = shifted.rowwise().sum();
  Eigen::MatrixXd v = (m.array() + s.array().log()).matrix();
  // softmax cached for the backward pass
  Eigen::MatrixXd soft = shifted.array().colwise() / s.array();
  auto an = a.node();
  return make_node(std::move(v), {a}, [an, soft](const Node& out) {
    if (an->requires_grad) {
      an->accumulate((soft.array().colwise() * out.grad.col(0).array()).matrix());
    }
  });
}

Var softmax_rows(const Var& a) {
  const Eigen::MatrixXd& x = a.value();
  Eigen::VectorXd m = x.rowwise().maxCoeff();
  Eigen::MatrixXd e = (x.colwise() - m).array().exp();
  Eigen::VectorXd s = e.rowwise().sum();
  Eigen::MatrixXd soft = e.array().colwise() / s.array();
  auto an = a.node();
  return make_node(soft, {a}, [an, soft](const Node& out) {
    if (an->requires_grad) {
      // ds/da = diag(s) - s s^T per row
      Eigen::VectorXd dot = out.grad.cwiseProduct(soft).rowwise().sum();
      Eigen::MatrixXd adj =
          soft.cwiseProduct((out.grad.array().colwise() - dot.array()).matrix());
      an->accumulate(adj);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Eigen::MatrixXd& x = a.value();
  Eigen::VectorXd m = x.rowwise().maxCoeff();
  Eigen::MatrixXd shifted = x.colwise() - m;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  Eigen::MatrixXd v = shifted.colwise() - lse;
  Eigen::MatrixXd soft = v.array().exp();
  auto an = a.node();
  return make_node(std::move(v), {a}, [an, soft](const Node& out) {
    if (an->requires_grad) {
      Eigen::VectorXd gsum = out.grad.rowwise().sum();
      Eigen::MatrixXd adj =
          out.grad - (soft.array().colwise() * gsum.array()).matrix();
      an->accumulate(adj);
    }
  });
}

Var detach(const Var& a) { return Var::constant(a.value()); }

Var row_squared_norm(const Var& a) { return row_sum(square(a)); }

Var normalize_rows(const Var& a) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms(i) == 0.0) throw std::invalid_argument("normalize_rows: zero-norm row");
  }
  Var n = sqrt(row_squared_norm(a));
  Var inv = div(Var::constant(Eigen::MatrixXd::Ones(a.rows(), 1)), n);
  return mul_colvec(a, inv);
}

Var cosine_rows(const Var& a, const Var& b) {
  check_same_shape(a, b, "cosine_rows");
  return row_sum(mul(normalize_rows(a), normalize_rows(b)));
}

}  // namespace ricasso::ad
