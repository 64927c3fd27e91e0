#include "luna/model.hpp"

#include <algorithm>

namespace luna {

Example build_example(const Dialogue& dialogue, int turn,
                      const std::vector<TurnLabels>& labels,
                      const Ontology& ontology, const Vocab& vocab,
                      const Config& cfg) {
  if (turn < 1 || turn > static_cast<int>(labels.size()))
    throw ContractError("build_example: turn " + std::to_string(turn) +
                        " has no derived labels");
  Example ex;
  ex.dialogue_id = dialogue.id;
  ex.turn = turn;
  ex.seq = build_input_sequence(dialogue, turn, vocab, cfg.max_seq_len);
  ex.labels = labels[turn - 1];
  if (turn >= 2) ex.prev_targets = labels[turn - 2].target;
  ex.gold_values.reserve(ontology.slot_count());
  const Turn& now = dialogue.turns[turn - 1];
  for (const std::string& slot : ontology.slots) {
    auto it = now.state.find(slot);
    ex.gold_values.push_back(it == now.state.end() ? "none" : it->second);
  }
  ex.order = order_slots(ex.labels, ontology);
  return ex;
}

std::vector<Example> build_examples(const Corpus& corpus,
                                    const Ontology& ontology, const Vocab& vocab,
                                    const Config& cfg) {
  std::vector<Example> out;
  for (const Dialogue& d : corpus.dialogues) {
    const auto labels = derive_alignment_labels(d, ontology, cfg.align_first_change);
    for (int t = 1; t <= static_cast<int>(d.turns.size()); ++t)
      out.push_back(build_example(d, t, labels, ontology, vocab, cfg));
  }
  return out;
}

Tensor listmle_loss(const Tensor& scores, const std::vector<int>& order) {
  if (scores.cols() != 1)
    throw ContractError("listmle_loss: scores must be a column, got " +
                        shape_str(scores.value()));
  const Index J = scores.rows();
  if (static_cast<Index>(order.size()) != J)
    throw ContractError("listmle_loss: order length " +
                        std::to_string(order.size()) + " for " +
                        std::to_string(J) + " scores");
  std::vector<bool> seen(static_cast<size_t>(J), false);
  for (int idx : order) {
    if (idx < 0 || idx >= J || seen[static_cast<size_t>(idx)])
      throw ContractError("listmle_loss: order is not a permutation");
    seen[static_cast<size_t>(idx)] = true;
  }
  if (J <= 1) return Tensor::scalar(0.0);

  const Tensor ordered = gather_rows(scores, order);  // best-first
  Tensor loss = Tensor::scalar(0.0);
  for (Index k = 0; k + 1 < J; ++k) {
    const Tensor suffix = slice_rows(ordered, k, J - k);
    loss = loss + (logsumexp_all(suffix) - slice_rows(ordered, k, 1));
  }
  return loss;
}

Tensor value_match_logits(const Tensor& o_star, const Tensor& candidates) {
  if (o_star.rows() != 1)
    throw ContractError("value matcher: expected one projected row, got " +
                        shape_str(o_star.value()));
  if (candidates.rows() < 1)
    throw ContractError("value matcher: empty candidate list");
  if (candidates.cols() != o_star.cols())
    throw ShapeError("value matcher: width mismatch " +
                     shape_str(candidates.value()) + " vs " +
                     shape_str(o_star.value()));
  const Tensor diff = sub_rowwise(candidates, o_star);
  const Tensor dist = sqrt(row_sum(cmul(diff, diff)));  // V x 1 euclidean
  return scale(transpose(dist), -1.0);
}

Index argmax_lowest(const Mat& row) {
  Index best = 0;
  for (Index i = 1; i < row.cols(); ++i)
    if (row(0, i) > row(0, best)) best = i;
  return best;
}

namespace {

Mat softmax_row(const Mat& row) {
  Mat p = (row.array() - row.maxCoeff()).exp();
  return p / p.sum();
}

}  // namespace

LunaModel::LunaModel(ParamStore& store, const Config& cfg, const Vocab& vocab,
                     const Ontology& ontology)
    : cfg_(cfg), vocab_(&vocab), ontology_(&ontology), store_(&store) {
  cfg_.validate();
  ontology.validate();

  utt_ = std::make_unique<UtteranceEncoder>(store, cfg_, vocab.size());
  slot_enc_ = std::make_unique<SchemaEncoder>(store, cfg_, "slot_enc",
                                              utt_->token_table());
  val_enc_ = std::make_unique<SchemaEncoder>(store, cfg_, "val_enc",
                                             utt_->token_table());

  const AttentionConfig attn(cfg_.d, cfg_.heads);
  t2s_ = MultiHeadAttention(store, "align.t2s", attn, cfg_.init_std);
  for (int i = 0; i < cfg_.n_slot_sa; ++i)
    slot_sa_.emplace_back(store, "align.slot_sa.layer" + std::to_string(i),
                          attn, cfg_.init_std);
  s2t_single_ = MultiHeadAttention(store, "align.s2t_single", attn, cfg_.init_std);
  ae_ = EmbeddingTable(store, "align.ae", 2, cfg_.d, cfg_.init_std);
  s2t_overall_ = MultiHeadAttention(store, "align.s2t_overall", attn, cfg_.init_std);
  for (int i = 0; i < cfg_.n_turn_sa; ++i)
    turn_sa_.emplace_back(store, "align.turn_sa.layer" + std::to_string(i),
                          attn, cfg_.init_std);
  align_out_ = Linear(store, "align.out", cfg_.d, 1, cfg_.init_std);
  rank_ = Linear(store, "align.rank", cfg_.d, 1, cfg_.init_std);
  value_proj_ = Linear(store, "value.proj", cfg_.d, cfg_.d, cfg_.init_std);
  value_norm_ = LayerNormParams(store, "value.norm", cfg_.d);

  if (cfg_.freeze_schema_encoders) {
    store.freeze_prefix("slot_enc.", true);
    store.freeze_prefix("val_enc.", true);
  }
  slot_cache_ = std::make_unique<SchemaCache>(*slot_enc_, ontology.slots,
                                              cfg_.freeze_schema_encoders);
  for (const std::string& slot : ontology.slots)
    value_caches_.push_back(std::make_unique<SchemaCache>(
        *val_enc_, ontology.candidates(slot), cfg_.freeze_schema_encoders));
}

void LunaModel::refresh_schema() {
  slot_cache_->invalidate();
  for (auto& cache : value_caches_) cache->invalidate();
}

void LunaModel::warm_caches() {
  slot_vectors();
  for (int j = 0; j < ontology_->slot_count(); ++j) candidate_vectors(j);
}

Tensor LunaModel::slot_vectors() { return slot_cache_->get(*vocab_, *store_); }

Tensor LunaModel::candidate_vectors(int slot) {
  return value_caches_[static_cast<size_t>(slot)]->get(*vocab_, *store_);
}

ModelOutput LunaModel::forward(const Example& ex,
                               const std::vector<int>& prev_alignment,
                               bool with_losses, Diagnostics* diag) {
  const int J = ontology_->slot_count();
  const Index R = ex.seq.n_rows();
  const Index blank_row = ex.seq.blank_row();

  if (!prev_alignment.empty() && static_cast<int>(prev_alignment.size()) != J)
    throw ContractError("forward: previous alignment has " +
                        std::to_string(prev_alignment.size()) + " entries for " +
                        std::to_string(J) + " slots");
  for (int p : prev_alignment)
    if (p < kBlankTarget || p > ex.turn)
      throw ContractError("forward: previous alignment target " +
                          std::to_string(p) + " exceeds turn " +
                          std::to_string(ex.turn));
  if (with_losses) {
    if (static_cast<int>(ex.labels.target.size()) != J ||
        static_cast<int>(ex.gold_values.size()) != J)
      throw ContractError("forward: example labels do not cover the ontology");
  }

  ModelOutput out;
  out.order_loss = Tensor::scalar(0.0);
  out.align_loss = Tensor::scalar(0.0);
  out.value_loss = Tensor::scalar(0.0);
  out.predicted_turn.assign(static_cast<size_t>(J), kBlankTarget);
  out.predicted_value.assign(static_cast<size_t>(J), "none");

  const Tensor H = utt_->encode(ex.seq);
  const Tensor h_s = slot_vectors();

  // slots gather evidence from the whole history
  AttentionTrace t2s_trace;
  const Tensor slot_utt =
      t2s_.apply(h_s, H, H, nullptr, diag ? &t2s_trace : nullptr);
  if (diag) diag->token_attention = t2s_trace.head_weights;

  // gold target row per slot; -1 marks a truncated-away target
  std::vector<Index> gold_row(static_cast<size_t>(J), -1);
  if (with_losses)
    for (int j = 0; j < J; ++j) {
      const int target = ex.labels.target[j];
      gold_row[static_cast<size_t>(j)] =
          target == kBlankTarget ? blank_row : ex.seq.row_of_turn(target);
    }

  auto value_head = [&](int j, const Tensor& d_star, bool force_none) {
    const Tensor o_star = value_norm_.apply(value_proj_.apply(d_star));
    const Tensor cand = candidate_vectors(j);
    const Tensor logits = value_match_logits(o_star, cand);
    const auto& names = ontology_->candidates(ontology_->slots[static_cast<size_t>(j)]);
    if (force_none)
      out.predicted_value[static_cast<size_t>(j)] = "none";
    else
      out.predicted_value[static_cast<size_t>(j)] =
          names[static_cast<size_t>(argmax_lowest(logits.value()))];
    if (with_losses && gold_row[static_cast<size_t>(j)] >= 0) {
      const std::string& gold = ex.gold_values[static_cast<size_t>(j)];
      const auto at = std::find(names.begin(), names.end(), gold);
      if (at == names.end())
        throw DataError("forward: gold value '" + gold + "' missing from slot '" +
                        ontology_->slots[static_cast<size_t>(j)] + "'");
      const Index gold_idx = at - names.begin();
      out.value_loss =
          out.value_loss +
          (logsumexp_all(logits) - slice_cols(logits, gold_idx, 1));
    }
  };

  if (cfg_.no_alignment_module) {
    // ablated: value prediction straight off the utterance-aware slot vectors
    for (int j = 0; j < J; ++j) {
      if (with_losses && gold_row[static_cast<size_t>(j)] < 0) continue;
      value_head(j, slice_rows(slot_utt, j, 1), /*force_none=*/false);
      if (with_losses) ++out.slots_scored;
    }
    out.joint_loss = scale(out.value_loss, cfg_.w_value);
    return out;
  }

  // slot self-attention: correlations among slots
  Tensor slots = slot_utt;
  for (const TransformerBlock& block : slot_sa_) slots = block.apply(slots);
  if (diag) diag->slot_states = slots.value();

  if (with_losses && !cfg_.no_ranking_task) {
    const Tensor f = sigmoid(rank_.apply(slots));  // J x 1 scores in (0,1)
    out.order_loss = listmle_loss(f, ex.order);
  }

  // every slot queries every turn's token span, stacked as J blocks of R rows
  std::vector<int> repeat(static_cast<size_t>(J * R));
  std::vector<std::pair<Index, Index>> row_spans(static_cast<size_t>(J * R));
  for (int j = 0; j < J; ++j)
    for (Index i = 0; i < R; ++i) {
      repeat[static_cast<size_t>(j * R + i)] = j;
      row_spans[static_cast<size_t>(j * R + i)] = ex.seq.spans[static_cast<size_t>(i)];
    }
  const Tensor q_big = gather_rows(h_s, repeat);
  const Mat turn_mask = span_mask(row_spans, H.rows());
  const Tensor u_bar = s2t_single_.apply(q_big, H, H, &turn_mask);

  // previous-turn alignment flags
  std::vector<int> ae_ids(static_cast<size_t>(J * R), kAeNotAligned);
  if (!prev_alignment.empty())
    for (int j = 0; j < J; ++j) {
      const int p = prev_alignment[static_cast<size_t>(j)];
      const Index row = p == kBlankTarget ? blank_row : ex.seq.row_of_turn(p);
      if (row >= 0) ae_ids[static_cast<size_t>(j * R + row)] = kAeAligned;
    }
  const Tensor u_hat = u_bar + ae_.rows(ae_ids);

  const Tensor u_tilde = cfg_.no_overall_slot_to_turn
                             ? u_hat
                             : s2t_overall_.apply(u_hat, slots, slots);

  const Mat block_mask = block_diag_mask(std::vector<Index>(static_cast<size_t>(J), R));
  Tensor d_big = u_tilde;
  for (const TransformerBlock& block : turn_sa_) d_big = block.apply(d_big, &block_mask);

  const Tensor align_logits = align_out_.apply(d_big);  // (J*R) x 1

  for (int j = 0; j < J; ++j) {
    const Tensor logit_row = transpose(slice_rows(align_logits, j * R, R));  // 1 x R
    const Mat probs = softmax_row(logit_row.value());
    if (diag) {
      diag->align_dist.push_back(probs);
      diag->turn_blocks.push_back(
          d_big.value().block(j * R, 0, R, d_big.cols()));
    }
    const Index pred_row = argmax_lowest(probs);
    out.predicted_turn[static_cast<size_t>(j)] = ex.seq.turn_of_row(pred_row);

    if (with_losses) {
      const Index gr = gold_row[static_cast<size_t>(j)];
      if (gr < 0) continue;  // evidence truncated away: skip align and value
      out.align_loss = out.align_loss + (logsumexp_all(logit_row) -
                                         slice_cols(logit_row, gr, 1));
      ++out.slots_scored;
    }

    Tensor d_star;
    if (cfg_.soft_alignment) {
      d_star = matmul(softmax(logit_row), slice_rows(d_big, j * R, R));
    } else {
      d_star = slice_rows(d_big, j * R + pred_row, 1);
    }
    const bool force_none = pred_row == blank_row;
    if (with_losses || !force_none)
      value_head(j, d_star, force_none);
    else
      out.predicted_value[static_cast<size_t>(j)] = "none";
  }

  out.joint_loss = scale(out.order_loss, cfg_.w_order) +
                   scale(out.align_loss, cfg_.w_align) +
                   scale(out.value_loss, cfg_.w_value);
  return out;
}

}  // namespace luna
