#include "luna/encoders.hpp"

#include <numeric>

namespace luna {

UtteranceEncoder::UtteranceEncoder(ParamStore& store, const Config& cfg,
                                   int vocab_size)
    : d_(cfg.d), max_seq_len_(cfg.max_seq_len), max_turns_(cfg.max_turns) {
  if (vocab_size < 5)
    throw ContractError("utterance encoder: vocab smaller than its reserved block");
  tok_ = EmbeddingTable(store, "utt.tok", vocab_size, d_, cfg.init_std);
  pos_ = EmbeddingTable(store, "utt.pos", max_seq_len_, d_, cfg.init_std);
  seg_ = EmbeddingTable(store, "utt.seg", 3, d_, cfg.init_std);
  // real turns 1..max_turns plus the 0 sentinel and the t+1 blank pseudo-turn
  turn_ = EmbeddingTable(store, "utt.turn", max_turns_ + 2, d_, cfg.init_std);
  emb_norm_ = LayerNormParams(store, "utt.emb_norm", d_);
  const AttentionConfig attn(cfg.d, cfg.heads);
  for (int i = 0; i < cfg.utt_layers; ++i)
    blocks_.emplace_back(store, "utt.layer" + std::to_string(i), attn,
                         cfg.init_std);
}

Tensor UtteranceEncoder::encode(const InputSequence& seq) const {
  const int L = static_cast<int>(seq.tokens.size());
  if (L < 1) throw ContractError("utterance encoder: empty input sequence");
  if (L > max_seq_len_)
    throw ContractError("utterance encoder: " + std::to_string(L) +
                        " tokens exceed max_seq_len " +
                        std::to_string(max_seq_len_));
  if (seq.t + 1 > max_turns_ + 1)
    throw ContractError("utterance encoder: turn " + std::to_string(seq.t) +
                        " exceeds max_turns " + std::to_string(max_turns_));
  if (seq.turn_ids.size() != seq.tokens.size() ||
      seq.segment_ids.size() != seq.tokens.size())
    throw ContractError("utterance encoder: token/turn/segment lists disagree");

  std::vector<int> positions(seq.tokens.size());
  std::iota(positions.begin(), positions.end(), 0);

  Tensor x = emb_norm_.apply(((tok_.rows(seq.tokens) + pos_.rows(positions)) +
                              seg_.rows(seq.segment_ids)) +
                             turn_.rows(seq.turn_ids));
  for (const TransformerBlock& block : blocks_) x = block.apply(x);
  return x;
}

SchemaEncoder::SchemaEncoder(ParamStore& store, const Config& cfg,
                             const std::string& prefix,
                             const EmbeddingTable& token_table)
    : max_seq_len_(cfg.max_seq_len), tok_(token_table) {
  pos_ = EmbeddingTable(store, prefix + ".pos", cfg.max_seq_len, cfg.d,
                        cfg.init_std);
  emb_norm_ = LayerNormParams(store, prefix + ".emb_norm", cfg.d);
  const AttentionConfig attn(cfg.d, cfg.heads);
  for (int i = 0; i < cfg.schema_layers; ++i)
    blocks_.emplace_back(store, prefix + ".layer" + std::to_string(i), attn,
                         cfg.init_std);
}

Tensor SchemaEncoder::encode(const std::vector<std::string>& texts,
                             const Vocab& vocab) const {
  if (texts.empty()) throw ContractError("schema encoder: no texts");

  std::vector<int> ids, positions, cls_rows;
  std::vector<Index> sizes;
  for (const std::string& text : texts) {
    const std::vector<int> toks = tokenize(text, vocab);
    if (toks.empty())
      throw DataError("schema encoder: text '" + text + "' has no tokens");
    if (static_cast<int>(toks.size()) + 1 > max_seq_len_)
      throw ContractError("schema encoder: text '" + text +
                          "' exceeds max_seq_len");
    cls_rows.push_back(static_cast<int>(ids.size()));
    ids.push_back(Vocab::kCls);
    positions.push_back(0);
    for (size_t i = 0; i < toks.size(); ++i) {
      ids.push_back(toks[i]);
      positions.push_back(static_cast<int>(i) + 1);
    }
    sizes.push_back(static_cast<Index>(toks.size()) + 1);
  }

  Tensor x = emb_norm_.apply(tok_.rows(ids) + pos_.rows(positions));
  const Mat mask = block_diag_mask(sizes);
  for (const TransformerBlock& block : blocks_) x = block.apply(x, &mask);
  return gather_rows(x, cls_rows);
}

SchemaCache::SchemaCache(const SchemaEncoder& encoder,
                         std::vector<std::string> texts, bool frozen)
    : encoder_(&encoder), texts_(std::move(texts)), frozen_(frozen) {}

Tensor SchemaCache::get(const Vocab& vocab, const ParamStore& store) {
  if (frozen_) {
    if (!valid_) {
      NoGradGuard guard;
      cached_ = encoder_->encode(texts_, vocab);
      valid_ = true;
    }
    return cached_;
  }
  if (!valid_ || version_ != store.version()) {
    cached_ = encoder_->encode(texts_, vocab);
    version_ = store.version();
    valid_ = true;
  }
  return cached_;
}

}  // namespace luna
