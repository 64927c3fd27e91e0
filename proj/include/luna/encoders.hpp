#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "luna/config.hpp"
#include "luna/corpus.hpp"
#include "luna/nn.hpp"

namespace luna {

// Contextualizes a flattened dialogue history. Each token state is the sum
// of token, position, segment, and turn embeddings, layer-normalized and
// refined by transformer blocks with unrestricted attention. The norm keeps
// token states at unit scale so attention logits start alive regardless of
// init_std. Parameters live under "utt.".
class UtteranceEncoder {
 public:
  UtteranceEncoder(ParamStore& store, const Config& cfg, int vocab_size);

  // L x d states, one per input token
  Tensor encode(const InputSequence& seq) const;

  const EmbeddingTable& token_table() const { return tok_; }

 private:
  int d_ = 0;
  int max_seq_len_ = 0;
  int max_turns_ = 0;
  EmbeddingTable tok_, pos_, seg_, turn_;
  LayerNormParams emb_norm_;
  std::vector<TransformerBlock> blocks_;
};

// Encodes short schema texts (slot names, candidate values) into one summary
// vector each: every text is prefixed with [CLS], texts are stacked and run
// through shared blocks under a block-diagonal mask so they cannot see each
// other, and the [CLS] rows are returned. The token table is shared with the
// utterance encoder; positions restart per text.
class SchemaEncoder {
 public:
  SchemaEncoder(ParamStore& store, const Config& cfg, const std::string& prefix,
                const EmbeddingTable& token_table);

  // n x d summary vectors, one per text
  Tensor encode(const std::vector<std::string>& texts, const Vocab& vocab) const;

 private:
  int max_seq_len_ = 0;
  EmbeddingTable tok_, pos_;
  LayerNormParams emb_norm_;
  std::vector<TransformerBlock> blocks_;
};

// Memoizes one schema encoding between parameter updates. Frozen mode
// computes once without graph edges and serves that tensor until
// invalidate() (intended once per epoch); trainable mode recomputes whenever
// the store version moves, so examples inside one step share a single graph.
class SchemaCache {
 public:
  SchemaCache(const SchemaEncoder& encoder, std::vector<std::string> texts,
              bool frozen);

  Tensor get(const Vocab& vocab, const ParamStore& store);
  void invalidate() { valid_ = false; }
  bool frozen() const { return frozen_; }

 private:
  const SchemaEncoder* encoder_;
  std::vector<std::string> texts_;
  bool frozen_ = false;
  bool valid_ = false;
  uint64_t version_ = 0;
  Tensor cached_;
};

}  // namespace luna
