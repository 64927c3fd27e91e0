#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "luna/corpus.hpp"
#include "luna/model.hpp"

namespace luna {

// Decoded output for one dialogue turn, slot-indexed like the ontology.
struct TurnPrediction {
  std::string dialogue_id;
  int turn = 0;                     // 1-based
  std::vector<std::string> values;  // per slot; unmentioned must be "none"
  std::vector<int> aligned_turn;    // per slot; kBlankTarget = never mentioned
};

struct PerTurnBucket {
  int depth = 0;  // turn index within the dialogue
  int64_t turns = 0;
  int64_t correct = 0;

  double accuracy() const {
    return turns == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(turns);
  }
};

struct EvalReport {
  double joint_accuracy = 0.0;
  double slot_accuracy = 0.0;
  double alignment_accuracy = 0.0;           // over (turn, slot) pairs
  double alignment_accuracy_dialogue = 0.0;  // every pair of a dialogue correct
  std::vector<PerTurnBucket> per_turn;       // ascending depth
  int64_t n_dialogues = 0;
  int64_t n_turns = 0;
  int64_t n_slots = 0;

  std::string to_json_text() const;
  std::string per_turn_csv() const;  // depth,n,joint_accuracy
};

// ---- metrics ---------------------------------------------------------------
// Each metric demands exactly one prediction per (dialogue, turn) covering the
// full slot set; gaps, duplicates, and size mismatches raise ContractError.

// Fraction of turns whose every slot value matches the gold state (slots
// absent from the state count as "none").
double joint_accuracy(const std::vector<TurnPrediction>& predictions,
                      const Corpus& gold, const Ontology& ontology);

// Fraction of individual (turn, slot) values that match.
double slot_accuracy(const std::vector<TurnPrediction>& predictions,
                     const Corpus& gold, const Ontology& ontology);

// Fraction of (turn, slot) pairs whose predicted turn equals the derived
// label, BLANK included.
double alignment_accuracy(const std::vector<TurnPrediction>& predictions,
                          const Corpus& gold, const Ontology& ontology,
                          bool align_first_change = false);

// Joint accuracy bucketed by turn depth; buckets aggregate back to the
// overall number when weighted by `turns`.
std::vector<PerTurnBucket> per_turn_curve(const std::vector<TurnPrediction>& predictions,
                                          const Corpus& gold, const Ontology& ontology);

EvalReport make_report(const std::vector<TurnPrediction>& predictions,
                       const Corpus& gold, const Ontology& ontology,
                       bool align_first_change = false);

// ---- inference -------------------------------------------------------------

struct EvalRun {
  EvalReport report;
  std::vector<TurnPrediction> predictions;  // dialogue order, turns ascending
};

// Runs the tracker over every turn with gradients off, feeding each turn's
// predicted alignment into the next turn's flag embeddings. Dialogues may be
// spread over `threads` workers; results are identical to the single-thread
// run. Schema caches are dropped before and after so a surrounding training
// loop never sees gradient-free encodings.
EvalRun evaluate_model(LunaModel& model, const Corpus& corpus, int threads = 1);

// Diagnostic, not a guarantee: for slots whose alignment is predicted
// correctly, replace every token of the turns the slot is NOT aligned to with
// [UNK] and report the fraction of value predictions left unchanged. Turn
// self-attention mixes rows, so this is expected to sit near 1 only for a
// well-trained tracker.
double alignment_consistency_probe(LunaModel& model, const Corpus& corpus,
                                   int max_dialogues = 8);

}  // namespace luna
