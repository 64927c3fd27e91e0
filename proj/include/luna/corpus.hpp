#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "luna/errors.hpp"
#include "luna/tensor.hpp"

namespace luna {

// A dialogue turn: the user speaks, the system answers, and the cumulative
// gold state after the exchange is annotated.
struct Turn {
  int index = 0;  // 1-based
  std::string user;
  std::string system;
  std::map<std::string, std::string> state;  // slot -> value, cumulative
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  std::set<std::string> domains;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
};

// Slot catalog. Slot names are domain-qualified ("hotel-area") and kept in
// sorted order; row/index positions throughout the model follow this order.
struct Ontology {
  std::vector<std::string> slots;
  std::map<std::string, std::vector<std::string>> values;

  int slot_count() const { return static_cast<int>(slots.size()); }
  int slot_index(const std::string& name) const;
  const std::vector<std::string>& candidates(const std::string& slot) const;
  void validate() const;  // names unique & sorted, "none" in every value list
};

// Alignment target for "never mentioned": encoded as turn 0.
constexpr int kBlankTarget = 0;

// Per-turn gold alignment: target[j] is the turn (1..t) whose utterance set
// slot j's current value, or kBlankTarget when the value is "none".
struct TurnLabels {
  int turn = 0;
  std::vector<int> target;
};

std::vector<TurnLabels> derive_alignment_labels(const Dialogue& dialogue,
                                                const Ontology& ontology,
                                                bool align_first_change = false);

// Slot ordering for the ranking task: mentioned slots grouped by their target
// turn in turn order (lexicographic within a turn), then the never-mentioned
// slots lexicographically. Returns a permutation of slot indices.
std::vector<int> order_slots(const TurnLabels& labels, const Ontology& ontology);

// ---- tokenization --------------------------------------------------------

// Lowercases and splits on whitespace; punctuation becomes single-char tokens.
std::vector<std::string> tokenize_text(const std::string& text);

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kBlank = 4;

  std::vector<std::string> id_to_token;
  std::map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int id(const std::string& token) const;  // kUnk for unseen tokens

  // Reserved specials first, then every distinct corpus/ontology token in
  // sorted order.
  static Vocab build(const Corpus& corpus, const Ontology& ontology);
  static Vocab from_tokens(std::vector<std::string> id_to_token);
};

std::vector<int> tokenize(const std::string& text, const Vocab& vocab);

// ---- model input assembly ------------------------------------------------

// Flattened dialogue history for predicting at turn t:
//   [CLS] Q_f R_f ... Q_t R_t [SEP] [BLANK]
// where f is the first turn kept after oldest-first truncation. Each kept
// turn maps to one "row" of the alignment pipeline; the trailing row is the
// BLANK pseudo-turn.
struct InputSequence {
  std::vector<int> tokens;
  std::vector<int> turn_ids;     // [CLS]=0, tokens of turn i = i, [SEP]=t, [BLANK]=t+1
  std::vector<int> segment_ids;  // 0 special, 1 user, 2 system
  int t = 0;
  int first_turn = 1;
  // token span (start, length) per kept turn, then the [BLANK] span, in order
  std::vector<std::pair<Index, Index>> spans;

  int n_rows() const { return t - first_turn + 2; }
  int blank_row() const { return n_rows() - 1; }
  // row of a real turn, or -1 if it was truncated away
  int row_of_turn(int turn) const {
    return (turn >= first_turn && turn <= t) ? turn - first_turn : -1;
  }
  int turn_of_row(int row) const {  // blank row has no real turn
    return row == blank_row() ? kBlankTarget : first_turn + row;
  }
};

InputSequence build_input_sequence(const Dialogue& dialogue, int t,
                                   const Vocab& vocab, int max_len);

// ---- serialization -------------------------------------------------------

Ontology load_ontology(const std::string& path);
Corpus load_corpus(const std::string& path, const Ontology& ontology);
void save_ontology(const Ontology& ontology, const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

// ---- synthetic corpus ----------------------------------------------------

// domain -> slot word -> candidate values (without the implicit "none").
struct OntologySpec {
  std::map<std::string, std::map<std::string, std::vector<std::string>>> domains;
  void validate() const;  // >=2 domains, >=3 slots each, >=4 values each
};

OntologySpec default_ontology_spec();
OntologySpec load_ontology_spec(const std::string& path);

struct SyntheticCorpus {
  Corpus corpus;
  Ontology ontology;
  int confusion_dialogues = 0;  // dialogues that reuse a value type across domains
};

SyntheticCorpus generate_synthetic_corpus(uint64_t seed, int n_dialogues,
                                          const OntologySpec& spec);

}  // namespace luna
