#pragma once

#include <cstdint>
#include <string>

#include "luna/errors.hpp"

namespace luna {

// One flat run configuration shared by training, evaluation, and the CLI.
// Loaded from JSON with strict field checking: unknown keys and wrong types
// are rejected by name.
struct Config {
  uint64_t seed = 1;

  // optimization
  int epochs = 30;
  int batch_size = 8;
  double peak_lr_encoder = 1e-3;  // utterance-encoder parameter group
  double peak_lr_rest = 1e-3;     // everything else
  double warmup_proportion = 0.1;
  double dev_fraction = 0.1;      // slice of the training corpus held out per run
  int early_stop_patience = 5;    // epochs without dev improvement before stopping
  double dropout = 0.0;           // reserved; only 0 is supported

  // architecture
  int d = 64;
  int heads = 4;
  int utt_layers = 2;
  int schema_layers = 2;
  int n_slot_sa = 4;
  int n_turn_sa = 2;
  int max_seq_len = 512;
  int max_turns = 16;  // sizes the turn-embedding table (plus two sentinels)
  double init_std = 0.02;

  // loss weighting (1.0 = plain unweighted sum)
  double w_order = 1.0;
  double w_align = 1.0;
  double w_value = 1.0;

  // behavior switches
  bool no_alignment_module = false;
  bool no_overall_slot_to_turn = false;
  bool no_ranking_task = false;
  bool soft_alignment = false;
  bool freeze_schema_encoders = false;
  bool align_first_change = false;  // align to first value change instead of latest

  void validate() const;

  static Config from_json_text(const std::string& text);
  static Config load(const std::string& path);
  std::string to_json_text() const;

  // Learning rates scaled for a full-size pretrained encoder rather than the
  // desk-scale defaults above.
  Config with_paper_hparams() const;
};

}  // namespace luna
