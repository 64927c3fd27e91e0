#pragma once

#include <memory>
#include <string>
#include <vector>

#include "luna/config.hpp"
#include "luna/corpus.hpp"
#include "luna/encoders.hpp"
#include "luna/nn.hpp"

namespace luna {

// Rows of the alignment-flag embedding table.
constexpr int kAeNotAligned = 0;
constexpr int kAeAligned = 1;

// One training/evaluation example: a dialogue truncated at `turn`.
struct Example {
  std::string dialogue_id;
  int turn = 0;
  InputSequence seq;
  TurnLabels labels;               // gold targets at `turn`
  std::vector<int> prev_targets;   // gold targets at turn-1; empty when turn == 1
  std::vector<std::string> gold_values;  // per slot, "none" when unset
  std::vector<int> order;          // gold ranking permutation of slot indices
};

Example build_example(const Dialogue& dialogue, int turn,
                      const std::vector<TurnLabels>& labels,
                      const Ontology& ontology, const Vocab& vocab,
                      const Config& cfg);
std::vector<Example> build_examples(const Corpus& corpus,
                                    const Ontology& ontology, const Vocab& vocab,
                                    const Config& cfg);

// Optional per-forward capture for dumps and tests.
struct Diagnostics {
  std::vector<Mat> token_attention;  // per head: slots x tokens (slot-over-token weights)
  Mat slot_states;                   // J x d after slot self-attention
  std::vector<Mat> turn_blocks;      // per slot: (rows) x d fused turn states
  std::vector<Mat> align_dist;       // per slot: 1 x rows probabilities
};

struct ModelOutput {
  Tensor order_loss;  // scalars; zero tensors when a head is disabled
  Tensor align_loss;
  Tensor value_loss;
  Tensor joint_loss;

  std::vector<int> predicted_turn;          // per slot; kBlankTarget = never
  std::vector<std::string> predicted_value; // per slot; "none" when blank
  int slots_scored = 0;  // slots whose gold target survived truncation
};

// Loss heads, exposed for direct verification ------------------------------

// Listwise ranking likelihood: position k of `order` contributes
// -log( exp(s[order[k]]) / sum_{l >= k} exp(s[order[l]]) ).
Tensor listmle_loss(const Tensor& scores /* J x 1 */,
                    const std::vector<int>& order);

// Candidate scores for one slot: negative Euclidean distance between the
// projected turn state and each candidate vector, as a 1 x V row.
Tensor value_match_logits(const Tensor& o_star /* 1 x d */,
                          const Tensor& candidates /* V x d */);

// Lowest-index argmax over a single row of probabilities.
Index argmax_lowest(const Mat& row);

// ---------------------------------------------------------------------------

// The full state tracker: dialogue/schema encoders, the bi-directional
// slot-turn fusion stack, the alignment and ranking heads, and the
// distance-based value matcher.
class LunaModel {
 public:
  LunaModel(ParamStore& store, const Config& cfg, const Vocab& vocab,
            const Ontology& ontology);

  // Runs the network on one example. `prev_alignment` feeds the
  // aligned/not-aligned flag embeddings: gold targets of the previous turn
  // during training (teacher forcing), the previous prediction at inference,
  // empty for turn 1. Losses are built only when `with_losses`.
  ModelOutput forward(const Example& ex, const std::vector<int>& prev_alignment,
                      bool with_losses, Diagnostics* diag = nullptr);

  // Drops frozen schema encodings so the next forward recomputes them.
  void refresh_schema();

  // Fills every schema/value cache up front so concurrent read-only forwards
  // (evaluation workers) never race on a first encode.
  void warm_caches();

  const Ontology& ontology() const { return *ontology_; }
  const Vocab& vocab() const { return *vocab_; }
  const Config& config() const { return cfg_; }

 private:
  Tensor slot_vectors();
  Tensor candidate_vectors(int slot);

  Config cfg_;
  const Vocab* vocab_;
  const Ontology* ontology_;
  ParamStore* store_;

  std::unique_ptr<UtteranceEncoder> utt_;
  std::unique_ptr<SchemaEncoder> slot_enc_;
  std::unique_ptr<SchemaEncoder> val_enc_;
  std::unique_ptr<SchemaCache> slot_cache_;
  std::vector<std::unique_ptr<SchemaCache>> value_caches_;  // one per slot

  MultiHeadAttention t2s_;          // slots query utterance tokens
  std::vector<TransformerBlock> slot_sa_;
  MultiHeadAttention s2t_single_;   // slot queries one turn's tokens
  EmbeddingTable ae_;               // aligned / not-aligned flags
  MultiHeadAttention s2t_overall_;  // turn rows query all slot states
  std::vector<TransformerBlock> turn_sa_;
  Linear align_out_;                // d -> 1 turn score
  Linear rank_;                     // d -> 1 ranking score
  Linear value_proj_;
  LayerNormParams value_norm_;
};

}  // namespace luna
