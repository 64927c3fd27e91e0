#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "luna/tensor.hpp"

namespace luna {

// A named trainable leaf. Freezing drops it out of both the backward
// sweep and optimizer updates.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Mat value, bool frozen = false);

  const std::string& name() const { return name_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  Tensor tensor() const { return Tensor(node_); }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  void zero_grad() {
    if (node_->grad.size() != 0) node_->grad.setZero();
  }

 private:
  std::string name_;
  bool frozen_ = false;
  std::shared_ptr<detail::Node> node_;
};

// Deterministic registry of all parameters of a model. Iteration order is
// the lexicographic name order; names are unique.
class ParamStore {
 public:
  using InitFn = std::function<void(Mat&, std::mt19937_64&)>;

  explicit ParamStore(uint64_t seed);

  Parameter add(const std::string& name, Index rows, Index cols, const InitFn& init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> trainable();

  void zero_grads();
  void freeze_prefix(const std::string& prefix, bool frozen);

  // Bumped by the optimizer after every applied step; lets caches detect
  // stale derived values.
  uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  std::size_t size() const { return params_.size(); }

  static InitFn normal_init(double stddev);
  static InitFn zeros_init();
  static InitFn ones_init();

 private:
  std::map<std::string, Parameter> params_;
  std::mt19937_64 rng_;
  uint64_t version_ = 0;
};

struct AttentionConfig {
  int model_dim = 0;
  int num_heads = 0;
  int head_dim = 0;

  AttentionConfig() = default;
  AttentionConfig(int d, int heads);
};

// Per-head attention weights captured during a forward pass, for
// diagnostics dumps and tests. Values only, no graph edges.
struct AttentionTrace {
  std::vector<Mat> head_weights;  // each q_rows x k_rows
};

Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1,
                    const Tensor& w2, const Tensor& b2);

struct Linear {
  Parameter w;  // in x out
  Parameter b;  // 1 x out

  Linear() = default;
  Linear(ParamStore& store, const std::string& prefix, int in, int out,
         double init_std);
  Tensor apply(const Tensor& x) const;
};

struct LayerNormParams {
  Parameter gain;  // 1 x d
  Parameter bias;  // 1 x d

  LayerNormParams() = default;
  LayerNormParams(ParamStore& store, const std::string& prefix, int d);
  Tensor apply(const Tensor& x, double eps = 1e-5) const;
};

// Scaled dot-product attention with learned query/key/value/output
// projections. `mask` is an optional additive q_rows x k_rows matrix
// (0 = keep, large negative = drop).
struct MultiHeadAttention {
  AttentionConfig cfg;
  Linear q_proj, k_proj, v_proj, o_proj;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& prefix,
                     const AttentionConfig& cfg, double init_std);
  Tensor apply(const Tensor& query, const Tensor& key, const Tensor& value,
               const Mat* mask = nullptr, AttentionTrace* trace = nullptr) const;
};

// Post-norm transformer block: self-attention and feed-forward sublayers,
// each wrapped in residual + layer norm. FFN inner width is 4*d.
struct TransformerBlock {
  MultiHeadAttention attn;
  LayerNormParams attn_norm;
  Linear ff1, ff2;
  LayerNormParams ffn_norm;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& prefix,
                   const AttentionConfig& cfg, double init_std);
  Tensor apply(const Tensor& x, const Mat* mask = nullptr,
               AttentionTrace* trace = nullptr) const;
};

struct EmbeddingTable {
  Parameter table;  // rows x d

  EmbeddingTable() = default;
  EmbeddingTable(ParamStore& store, const std::string& name, int rows, int d,
                 double init_std);
  Tensor rows(const std::vector<int>& ids) const {
    return gather_rows(table.tensor(), ids);
  }
};

// Additive mask that restricts each query row to one contiguous key span.
Mat span_mask(const std::vector<std::pair<Index, Index>>& row_spans, Index k_rows);
// Additive block-diagonal mask for stacked independent segments.
Mat block_diag_mask(const std::vector<Index>& segment_sizes);

constexpr double kMaskValue = -1e30;

}  // namespace luna
