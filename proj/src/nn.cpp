#include "luna/nn.hpp"

#include <cmath>

namespace luna {

Parameter::Parameter(std::string name, Mat value, bool frozen)
    : name_(std::move(name)), frozen_(frozen) {
  node_ = std::make_shared<detail::Node>();
  node_->value = std::move(value);
  node_->requires_grad = !frozen_;
}

void Parameter::set_frozen(bool frozen) {
  frozen_ = frozen;
  node_->requires_grad = !frozen;
  if (frozen) node_->grad.resize(0, 0);
}

ParamStore::ParamStore(uint64_t seed) : rng_(seed) {}

Parameter ParamStore::add(const std::string& name, Index rows, Index cols,
                          const InitFn& init) {
  if (params_.count(name))
    throw ContractError("ParamStore: duplicate parameter name '" + name + "'");
  Mat m(rows, cols);
  init(m, rng_);
  auto [it, ok] = params_.emplace(name, Parameter(name, std::move(m)));
  (void)ok;
  return it->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw ContractError("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw ContractError("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& [_, p] : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& [_, p] : params_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> ParamStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& [_, p] : params_)
    if (!p.frozen()) out.push_back(&p);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& [_, p] : params_) p.zero_grad();
}

void ParamStore::freeze_prefix(const std::string& prefix, bool frozen) {
  for (auto& [name, p] : params_)
    if (name.rfind(prefix, 0) == 0) p.set_frozen(frozen);
}

ParamStore::InitFn ParamStore::normal_init(double stddev) {
  return [stddev](Mat& m, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  };
}

ParamStore::InitFn ParamStore::zeros_init() {
  return [](Mat& m, std::mt19937_64&) { m.setZero(); };
}

ParamStore::InitFn ParamStore::ones_init() {
  return [](Mat& m, std::mt19937_64&) { m.setOnes(); };
}

AttentionConfig::AttentionConfig(int d, int heads)
    : model_dim(d), num_heads(heads), head_dim(d / heads) {
  if (d <= 0 || heads <= 0)
    throw ConfigError("attention: model_dim and num_heads must be positive");
  if (d % heads != 0)
    throw ConfigError("attention: model_dim " + std::to_string(d) +
                      " not divisible by num_heads " + std::to_string(heads));
}

Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1,
                    const Tensor& w2, const Tensor& b2) {
  Tensor h = relu(add_rowwise(matmul(x, w1), b1));
  return add_rowwise(matmul(h, w2), b2);
}

Linear::Linear(ParamStore& store, const std::string& prefix, int in, int out,
               double init_std)
    : w(store.add(prefix + ".w", in, out, ParamStore::normal_init(init_std))),
      b(store.add(prefix + ".b", 1, out, ParamStore::zeros_init())) {}

Tensor Linear::apply(const Tensor& x) const {
  return add_rowwise(matmul(x, w.tensor()), b.tensor());
}

LayerNormParams::LayerNormParams(ParamStore& store, const std::string& prefix, int d)
    : gain(store.add(prefix + ".gain", 1, d, ParamStore::ones_init())),
      bias(store.add(prefix + ".bias", 1, d, ParamStore::zeros_init())) {}

Tensor LayerNormParams::apply(const Tensor& x, double eps) const {
  return layer_norm(x, gain.tensor(), bias.tensor(), eps);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& prefix,
                                       const AttentionConfig& cfg, double init_std)
    : cfg(cfg),
      q_proj(store, prefix + ".q", cfg.model_dim, cfg.model_dim, init_std),
      k_proj(store, prefix + ".k", cfg.model_dim, cfg.model_dim, init_std),
      v_proj(store, prefix + ".v", cfg.model_dim, cfg.model_dim, init_std),
      o_proj(store, prefix + ".o", cfg.model_dim, cfg.model_dim, init_std) {}

Tensor MultiHeadAttention::apply(const Tensor& query, const Tensor& key,
                                 const Tensor& value, const Mat* mask,
                                 AttentionTrace* trace) const {
  if (query.rows() < 1) throw ContractError("multi_head_attention: empty query");
  if (key.rows() == 0) throw ContractError("multi_head_attention: empty key set");
  if (key.rows() != value.rows())
    throw ShapeError("multi_head_attention: key/value row counts differ: " +
                     shape_str(key.value()) + " vs " + shape_str(value.value()));
  if (query.cols() != cfg.model_dim || key.cols() != cfg.model_dim ||
      value.cols() != cfg.model_dim)
    throw ShapeError("multi_head_attention: last dim must be " +
                     std::to_string(cfg.model_dim));
  if (mask && (mask->rows() != query.rows() || mask->cols() != key.rows()))
    throw ShapeError("multi_head_attention: mask shape " + shape_str(*mask) +
                     " does not match scores (" + std::to_string(query.rows()) +
                     "x" + std::to_string(key.rows()) + ")");

  Tensor q = q_proj.apply(query);
  Tensor k = k_proj.apply(key);
  Tensor v = v_proj.apply(value);
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));

  Tensor mask_t;
  if (mask) mask_t = Tensor(*mask);

  std::vector<Tensor> head_outs;
  head_outs.reserve(cfg.num_heads);
  for (int h = 0; h < cfg.num_heads; ++h) {
    const Index off = static_cast<Index>(h) * cfg.head_dim;
    Tensor qh = slice_cols(q, off, cfg.head_dim);
    Tensor kh = slice_cols(k, off, cfg.head_dim);
    Tensor vh = slice_cols(v, off, cfg.head_dim);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_hd);
    if (mask) scores = scores + mask_t;
    Tensor weights = softmax(scores, 1);
    if (trace) trace->head_weights.push_back(weights.value());
    head_outs.push_back(matmul(weights, vh));
  }
  return o_proj.apply(concat_cols(head_outs));
}

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& prefix,
                                   const AttentionConfig& cfg, double init_std)
    : attn(store, prefix + ".attn", cfg, init_std),
      attn_norm(store, prefix + ".attn_norm", cfg.model_dim),
      ff1(store, prefix + ".ff1", cfg.model_dim, 4 * cfg.model_dim, init_std),
      ff2(store, prefix + ".ff2", 4 * cfg.model_dim, cfg.model_dim, init_std),
      ffn_norm(store, prefix + ".ffn_norm", cfg.model_dim) {}

Tensor TransformerBlock::apply(const Tensor& x, const Mat* mask,
                               AttentionTrace* trace) const {
  Tensor a = attn.apply(x, x, x, mask, trace);
  Tensor h = attn_norm.apply(x + a);
  Tensor f = feed_forward(h, ff1.w.tensor(), ff1.b.tensor(), ff2.w.tensor(),
                          ff2.b.tensor());
  return ffn_norm.apply(h + f);
}

EmbeddingTable::EmbeddingTable(ParamStore& store, const std::string& name,
                               int rows, int d, double init_std)
    : table(store.add(name, rows, d, ParamStore::normal_init(init_std))) {}

Mat span_mask(const std::vector<std::pair<Index, Index>>& row_spans, Index k_rows) {
  Mat m = Mat::Constant(static_cast<Index>(row_spans.size()), k_rows, kMaskValue);
  for (size_t r = 0; r < row_spans.size(); ++r) {
    const auto& [start, len] = row_spans[r];
    if (start < 0 || len <= 0 || start + len > k_rows)
      throw ContractError("span_mask: span out of range");
    m.row(static_cast<Index>(r)).segment(start, len).setZero();
  }
  return m;
}

Mat block_diag_mask(const std::vector<Index>& segment_sizes) {
  Index total = 0;
  for (Index s : segment_sizes) total += s;
  Mat m = Mat::Constant(total, total, kMaskValue);
  Index off = 0;
  for (Index s : segment_sizes) {
    m.block(off, off, s, s).setZero();
    off += s;
  }
  return m;
}

}  // namespace luna
