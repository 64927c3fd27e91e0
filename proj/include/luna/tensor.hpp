#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "luna/errors.hpp"

namespace luna {

// All numeric state is double precision, row-major.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {

// One vertex of the reverse-mode graph. `backward` pulls this node's
// accumulated gradient into its parents' gradient buffers.
struct Node {
  Mat value;
  Mat grad;  // allocated lazily, same shape as value once touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Mat& grad_ref() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    return grad;
  }
};

}  // namespace detail

// While a guard is alive, newly built tensors record no graph edges.
// Used for inference and for finite-difference re-evaluations.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Value-semantics handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Mat value, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient accumulated by the last backward(). Empty until touched.
  const Mat& grad() const;

  double item() const;  // 1x1 only
  double at(Index r, Index c) const { return value()(r, c); }

  // Reverse-mode sweep from a scalar loss. Gradients accumulate into
  // every reachable grad-requiring leaf; call ParamStore::zero_grads
  // (or Tensor::zero_grad on leaves) between steps.
  void backward() const;
  void zero_grad();

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  std::vector<detail::Node*> topo_order() const;
  std::shared_ptr<detail::Node> node_;
};

// ---- graph-building free functions -------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);  // same shape
Tensor operator-(const Tensor& a, const Tensor& b);  // same shape
Tensor operator-(const Tensor& a);

Tensor cmul(const Tensor& a, const Tensor& b);  // coefficient-wise product
Tensor scale(const Tensor& a, double s);
Tensor add_rowwise(const Tensor& x, const Tensor& row);  // x: n x m, row: 1 x m
Tensor sub_rowwise(const Tensor& x, const Tensor& row);
Tensor broadcast_row(const Tensor& row, Index n);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);

// Stable softmax along `axis` (1 = each row sums to one, 0 = each column).
Tensor softmax(const Tensor& x, int axis = 1);
// Stable log(sum(exp(x))) over all coefficients, returned as 1x1.
Tensor logsumexp_all(const Tensor& x);

// Per-row standardization followed by the affine map gain/bias (both 1 x d).
// eps sits inside the variance square root.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor sum_all(const Tensor& x);   // 1x1
Tensor row_sum(const Tensor& x);   // n x 1

Tensor slice_rows(const Tensor& x, Index start, Index count);
Tensor slice_cols(const Tensor& x, Index start, Index count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Row lookup: out.row(k) = table.row(indices[k]). Duplicate indices
// accumulate gradient into the same table row.
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);

std::string shape_str(const Mat& m);

}  // namespace luna
