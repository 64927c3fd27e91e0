#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "luna/checkpoint.hpp"
#include "luna/config.hpp"
#include "luna/corpus.hpp"
#include "luna/evaluator.hpp"

namespace luna {

struct TrainOptions {
  std::string loss_log_path;         // step-level CSV; "" keeps it in memory only
  std::string best_checkpoint_path;  // written when a new best-dev epoch appears
  std::string last_checkpoint_path;  // rolling end-of-epoch state, resume point
  std::string resume_path;           // continue from a last-state checkpoint
  int eval_threads = 1;
  std::ostream* progress = nullptr;  // one line per epoch when set
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_joint_loss = 0.0;
  double dev_joint_accuracy = 0.0;
  double dev_alignment_accuracy = 0.0;
};

struct TrainResult {
  int epochs_run = 0;   // epochs executed by this call
  int epochs_done = 0;  // total across resumes
  int best_epoch = 0;
  double best_dev_joint = -1.0;
  bool early_stopped = false;
  int64_t global_step = 0;
  std::vector<std::string> loss_csv;  // header + one row per step of this call
  std::vector<EpochLog> epochs;
  Checkpoint best;  // parameters of the best dev epoch seen by this call
  Checkpoint last;  // end-of-training state
};

// Dialogue-level split: a seed-fixed random subset of ceil(fraction * n)
// dialogues (capped so training keeps at least one) becomes dev; both sides
// preserve the corpus order.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double dev_fraction,
                                       uint64_t seed);

// Batch order for one epoch; a pure function of (n, seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, uint64_t seed, int epoch);

// Joint multi-task training: shuffled mini-batches of per-turn examples,
// teacher-forced previous alignments, two peak learning rates (utterance
// encoder vs everything else) on one warmup/decay schedule, dev joint
// accuracy per epoch with early stopping, best-dev model selection. The
// vocabulary is built from the training split plus the ontology.
TrainResult train_model(const Corpus& corpus, const Config& cfg,
                        const Ontology& ontology, const TrainOptions& opts = {});

}  // namespace luna
