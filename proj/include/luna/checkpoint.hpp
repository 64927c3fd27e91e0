#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "luna/config.hpp"
#include "luna/corpus.hpp"
#include "luna/model.hpp"
#include "luna/optim.hpp"

namespace luna {

constexpr uint32_t kCheckpointFormatVersion = 1;

// FNV-1a over raw bytes; guards every serialized array.
uint64_t fnv1a64(const void* data, std::size_t n);

// Everything needed to rebuild the tracker and continue training: the config,
// the exact vocabulary and ontology, every parameter array, and the optimizer
// moments. Stored as a JSON manifest followed by raw little-endian float64
// payloads, each integrity-checked.
struct Checkpoint {
  Config config;
  std::vector<std::string> vocab_tokens;
  Ontology ontology;

  std::map<std::string, Mat> arrays;    // parameter name -> values
  std::map<std::string, bool> frozen;   // parameter name -> frozen flag
  std::map<std::string, Adam::Slot> adam;
  int64_t adam_steps = 0;

  int64_t global_step = 0;
  int64_t total_steps = 0;
  int epochs_done = 0;
  double best_dev_joint = 0.0;
};

// Captures the current parameters (and optimizer moments when given).
Checkpoint snapshot_checkpoint(const ParamStore& store, const Adam* opt,
                               const Config& cfg, const Vocab& vocab,
                               const Ontology& ontology);

// Copies array values into an existing store; names and shapes must match the
// registered parameters exactly (optimizer arrays are matched separately).
void restore_parameters(const Checkpoint& ck, ParamStore& store);
void restore_optimizer(const Checkpoint& ck, Adam& opt);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// A model rebuilt from a checkpoint, owning its store/vocab/ontology. Heap
// only: the model keeps pointers into the sibling members.
struct LoadedModel {
  Config config;
  Vocab vocab;
  Ontology ontology;
  std::unique_ptr<ParamStore> store;
  std::unique_ptr<LunaModel> model;
};

std::unique_ptr<LoadedModel> restore_model(const Checkpoint& ck);

}  // namespace luna
