#include "luna/tensor.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace luna {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr new_node(Mat value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

// Builds an op node. Parents and the backward closure are only retained
// when some parent requires gradient and grad mode is on.
Tensor make_op(Mat value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward) {
  auto n = new_node(std::move(value));
  if (grad_enabled()) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

void accum(Node* p, const Mat& g) {
  if (p->requires_grad) p->grad_ref() += g;
}

void check_finite(const Mat& m, const char* op) {
  if (!m.allFinite())
    throw NumericError(std::string(op) + ": non-finite input value");
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

std::string shape_str(const Mat& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

Tensor::Tensor(Mat value, bool requires_grad) {
  node_ = new_node(std::move(value));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Mat m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), requires_grad);
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Mat::Zero(rows, cols), requires_grad);
}

const Mat& Tensor::value() const {
  if (!node_) throw ContractError("Tensor: use of undefined tensor");
  return node_->value;
}

const Mat& Tensor::grad() const {
  if (!node_) throw ContractError("Tensor: use of undefined tensor");
  return node_->grad;
}

double Tensor::item() const {
  const Mat& v = value();
  if (v.size() != 1)
    throw ContractError("Tensor::item: tensor is not scalar, shape " + shape_str(v));
  return v(0, 0);
}

void Tensor::zero_grad() {
  if (node_ && node_->grad.size() != 0) node_->grad.setZero();
}

std::vector<detail::Node*> Tensor::topo_order() const {
  // Iterative post-order DFS over parent edges; emission order is
  // determined by parent-list order, not by pointer values.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  if (!node_->requires_grad) return order;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward: undefined tensor");
  if (node_->value.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(node_->value));
  if (!node_->requires_grad) return;
  std::vector<Node*> order = topo_order();
  node_->grad_ref()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---- ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Mat& av = a.value();
  const Mat& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(av) +
                     " vs " + shape_str(bv));
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(av * bv, {a, b}, [an, bn](Node& self) {
    accum(an, self.grad * bn->value.transpose());
    accum(bn, an->value.transpose() * self.grad);
  });
}

Tensor transpose(const Tensor& a) {
  Node* an = a.node().get();
  return make_op(a.value().transpose(), {a}, [an](Node& self) {
    accum(an, self.grad.transpose());
  });
}

namespace {

void check_same_shape(const Mat& x, const Mat& y, const char* op) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw ShapeError(std::string(op) + ": shape mismatch: " + shape_str(x) +
                     " vs " + shape_str(y));
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  check_same_shape(a.value(), b.value(), "operator+");
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(a.value() + b.value(), {a, b}, [an, bn](Node& self) {
    accum(an, self.grad);
    accum(bn, self.grad);
  });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  check_same_shape(a.value(), b.value(), "operator-");
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(a.value() - b.value(), {a, b}, [an, bn](Node& self) {
    accum(an, self.grad);
    accum(bn, -self.grad);
  });
}

Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

Tensor cmul(const Tensor& a, const Tensor& b) {
  check_same_shape(a.value(), b.value(), "cmul");
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [an, bn](Node& self) {
    accum(an, self.grad.cwiseProduct(bn->value));
    accum(bn, self.grad.cwiseProduct(an->value));
  });
}

Tensor scale(const Tensor& a, double s) {
  Node* an = a.node().get();
  return make_op(a.value() * s, {a}, [an, s](Node& self) {
    accum(an, self.grad * s);
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& row) {
  const Mat& xv = x.value();
  const Mat& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols())
    throw ShapeError("add_rowwise: row must be 1x" + std::to_string(xv.cols()) +
                     ", got " + shape_str(rv));
  Node* xn = x.node().get();
  Node* rn = row.node().get();
  Mat out = xv;
  out.rowwise() += rv.row(0);
  return make_op(std::move(out), {x, row}, [xn, rn](Node& self) {
    accum(xn, self.grad);
    accum(rn, self.grad.colwise().sum());
  });
}

Tensor sub_rowwise(const Tensor& x, const Tensor& row) {
  const Mat& xv = x.value();
  const Mat& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols())
    throw ShapeError("sub_rowwise: row must be 1x" + std::to_string(xv.cols()) +
                     ", got " + shape_str(rv));
  Node* xn = x.node().get();
  Node* rn = row.node().get();
  Mat out = xv;
  out.rowwise() -= rv.row(0);
  return make_op(std::move(out), {x, row}, [xn, rn](Node& self) {
    accum(xn, self.grad);
    accum(rn, -self.grad.colwise().sum());
  });
}

Tensor broadcast_row(const Tensor& row, Index n) {
  const Mat& rv = row.value();
  if (rv.rows() != 1)
    throw ShapeError("broadcast_row: expected 1-row tensor, got " + shape_str(rv));
  Node* rn = row.node().get();
  Mat out = rv.replicate(n, 1);
  return make_op(std::move(out), {row}, [rn](Node& self) {
    accum(rn, self.grad.colwise().sum());
  });
}

Tensor relu(const Tensor& x) {
  Node* xn = x.node().get();
  return make_op(x.value().cwiseMax(0.0), {x}, [xn](Node& self) {
    accum(xn, self.grad.cwiseProduct(
                  (xn->value.array() > 0.0).cast<double>().matrix()));
  });
}

Tensor sigmoid(const Tensor& x) {
  Mat s = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  Node* xn = x.node().get();
  return make_op(std::move(s), {x}, [xn](Node& self) {
    Mat d = self.value.array() * (1.0 - self.value.array());
    accum(xn, self.grad.cwiseProduct(d));
  });
}

Tensor exp(const Tensor& x) {
  check_finite(x.value(), "exp");
  Node* xn = x.node().get();
  return make_op(x.value().array().exp().matrix(), {x}, [xn](Node& self) {
    accum(xn, self.grad.cwiseProduct(self.value));
  });
}

Tensor log(const Tensor& x) {
  if ((x.value().array() <= 0.0).any())
    throw NumericError("log: non-positive input");
  Node* xn = x.node().get();
  return make_op(x.value().array().log().matrix(), {x}, [xn](Node& self) {
    accum(xn, self.grad.cwiseQuotient(xn->value));
  });
}

Tensor sqrt(const Tensor& x) {
  if ((x.value().array() < 0.0).any())
    throw NumericError("sqrt: negative input");
  Node* xn = x.node().get();
  return make_op(x.value().array().sqrt().matrix(), {x}, [xn](Node& self) {
    // Guard the exact-zero point; elsewhere this is the analytic derivative.
    Mat denom = 2.0 * self.value.array().max(1e-12).matrix();
    accum(xn, self.grad.cwiseQuotient(denom));
  });
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1)
    throw ContractError("softmax: axis must be 0 or 1");
  check_finite(x.value(), "softmax");
  const Mat& xv = x.value();
  Mat out(xv.rows(), xv.cols());
  if (axis == 1) {
    for (Index r = 0; r < xv.rows(); ++r) {
      const double m = xv.row(r).maxCoeff();
      Eigen::ArrayXd e = (xv.row(r).array() - m).exp();
      out.row(r) = (e / e.sum()).matrix();
    }
  } else {
    for (Index c = 0; c < xv.cols(); ++c) {
      const double m = xv.col(c).maxCoeff();
      Eigen::ArrayXd e = (xv.col(c).array() - m).exp();
      out.col(c) = (e / e.sum()).matrix();
    }
  }
  Node* xn = x.node().get();
  return make_op(std::move(out), {x}, [xn, axis](Node& self) {
    if (!xn->requires_grad) return;
    Mat d(self.value.rows(), self.value.cols());
    if (axis == 1) {
      for (Index r = 0; r < d.rows(); ++r) {
        const double dot = self.grad.row(r).dot(self.value.row(r));
        d.row(r) = self.value.row(r).cwiseProduct(
            self.grad.row(r) - Mat::Constant(1, d.cols(), dot));
      }
    } else {
      for (Index c = 0; c < d.cols(); ++c) {
        const double dot = self.grad.col(c).dot(self.value.col(c));
        d.col(c) = self.value.col(c).cwiseProduct(
            self.grad.col(c) - Mat::Constant(d.rows(), 1, dot));
      }
    }
    accum(xn, d);
  });
}

Tensor logsumexp_all(const Tensor& x) {
  check_finite(x.value(), "logsumexp_all");
  const Mat& xv = x.value();
  if (xv.size() == 0) throw ContractError("logsumexp_all: empty input");
  const double m = xv.maxCoeff();
  const double s = (xv.array() - m).exp().sum();
  Mat out(1, 1);
  out(0, 0) = m + std::log(s);
  Node* xn = x.node().get();
  return make_op(std::move(out), {x}, [xn, m, s](Node& self) {
    Mat w = ((xn->value.array() - m).exp() / s).matrix();
    accum(xn, self.grad(0, 0) * w);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const Mat& xv = x.value();
  const Index d = xv.cols();
  if (d < 1) throw ShapeError("layer_norm: empty rows");
  if (gain.value().rows() != 1 || gain.value().cols() != d ||
      bias.value().rows() != 1 || bias.value().cols() != d)
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  check_finite(xv, "layer_norm");

  Mat xhat(xv.rows(), d);
  Eigen::ArrayXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((xv.row(r).array() - mean) * inv_std(r)).matrix();
  }
  Mat out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);

  Node* xn = x.node().get();
  Node* gn = gain.node().get();
  Node* bn = bias.node().get();
  return make_op(std::move(out), {x, gain, bias},
                 [xn, gn, bn, xhat, inv_std](Node& self) {
                   const Mat& g = self.grad;
                   accum(bn, g.colwise().sum());
                   accum(gn, g.cwiseProduct(xhat).colwise().sum());
                   if (!xn->requires_grad) return;
                   const Index d = g.cols();
                   Mat dx(g.rows(), d);
                   for (Index r = 0; r < g.rows(); ++r) {
                     Eigen::Array<double, 1, Eigen::Dynamic> dxhat =
                         g.row(r).array() * gn->value.row(0).array();
                     const double m1 = dxhat.mean();
                     const double m2 = (dxhat * xhat.row(r).array()).mean();
                     dx.row(r) =
                         ((dxhat - m1 - xhat.row(r).array() * m2) * inv_std(r))
                             .matrix();
                   }
                   accum(xn, dx);
                 });
}

Tensor sum_all(const Tensor& x) {
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  Node* xn = x.node().get();
  return make_op(std::move(out), {x}, [xn](Node& self) {
    accum(xn, Mat::Constant(xn->value.rows(), xn->value.cols(), self.grad(0, 0)));
  });
}

Tensor row_sum(const Tensor& x) {
  Mat out = x.value().rowwise().sum();
  Node* xn = x.node().get();
  return make_op(std::move(out), {x}, [xn](Node& self) {
    accum(xn, self.grad.replicate(1, xn->value.cols()));
  });
}

Tensor slice_rows(const Tensor& x, Index start, Index count) {
  const Mat& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " +
                     std::to_string(xv.rows()) + " rows");
  Node* xn = x.node().get();
  return make_op(xv.middleRows(start, count), {x}, [xn, start, count](Node& self) {
    if (!xn->requires_grad) return;
    xn->grad_ref().middleRows(start, count) += self.grad;
  });
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  const Mat& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " +
                     std::to_string(xv.cols()) + " cols");
  Node* xn = x.node().get();
  return make_op(xv.middleCols(start, count), {x}, [xn, start, count](Node& self) {
    if (!xn->requires_grad) return;
    xn->grad_ref().middleCols(start, count) += self.grad;
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  Index rows = 0;
  const Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols)
      throw ShapeError("concat_rows: column mismatch: " + shape_str(p.value()));
    rows += p.rows();
  }
  Mat out(rows, cols);
  Index off = 0;
  std::vector<Node*> nodes;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    nodes.push_back(p.node().get());
    offsets.push_back(off);
    off += p.rows();
  }
  return make_op(std::move(out), parts, [nodes, offsets](Node& self) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      Node* p = nodes[i];
      if (p->requires_grad)
        p->grad_ref() += self.grad.middleRows(offsets[i], p->value.rows());
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  Index cols = 0;
  const Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows)
      throw ShapeError("concat_cols: row mismatch: " + shape_str(p.value()));
    cols += p.cols();
  }
  Mat out(rows, cols);
  Index off = 0;
  std::vector<Node*> nodes;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    nodes.push_back(p.node().get());
    offsets.push_back(off);
    off += p.cols();
  }
  return make_op(std::move(out), parts, [nodes, offsets](Node& self) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      Node* p = nodes[i];
      if (p->requires_grad)
        p->grad_ref() += self.grad.middleCols(offsets[i], p->value.cols());
    }
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
  const Mat& tv = table.value();
  Mat out(static_cast<Index>(indices.size()), tv.cols());
  for (size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || i >= tv.rows())
      throw ContractError("gather_rows: index " + std::to_string(i) +
                          " out of " + std::to_string(tv.rows()) + " rows");
    out.row(static_cast<Index>(k)) = tv.row(i);
  }
  Node* tn = table.node().get();
  return make_op(std::move(out), {table}, [tn, indices](Node& self) {
    if (!tn->requires_grad) return;
    Mat& g = tn->grad_ref();
    for (size_t k = 0; k < indices.size(); ++k)
      g.row(indices[k]) += self.grad.row(static_cast<Index>(k));
  });
}

}  // namespace luna
