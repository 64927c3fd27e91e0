#include "luna/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <thread>
#include <utility>

#include <json.hpp>

#include "luna/errors.hpp"
#include "luna/tensor.hpp"

namespace luna {
namespace {

using PredKey = std::pair<std::string, int>;

// One prediction per (dialogue, turn), sized to the ontology.
std::map<PredKey, const TurnPrediction*> index_predictions(
    const std::vector<TurnPrediction>& predictions, const Corpus& gold,
    const Ontology& ontology) {
  const auto j = static_cast<std::size_t>(ontology.slot_count());
  std::map<PredKey, const TurnPrediction*> by_turn;
  for (const auto& p : predictions) {
    if (p.values.size() != j || p.aligned_turn.size() != j)
      throw ContractError("prediction for " + p.dialogue_id + " turn " +
                          std::to_string(p.turn) + " does not cover every slot");
    if (!by_turn.emplace(PredKey{p.dialogue_id, p.turn}, &p).second)
      throw ContractError("duplicate prediction for " + p.dialogue_id + " turn " +
                          std::to_string(p.turn));
  }
  for (const auto& d : gold.dialogues)
    for (const auto& turn : d.turns)
      if (by_turn.find({d.id, turn.index}) == by_turn.end())
        throw ContractError("missing prediction for " + d.id + " turn " +
                            std::to_string(turn.index));
  return by_turn;
}

std::string gold_value(const Turn& turn, const std::string& slot) {
  const auto it = turn.state.find(slot);
  return it == turn.state.end() ? std::string("none") : it->second;
}

double ratio(int64_t hit, int64_t total) {
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

double joint_accuracy(const std::vector<TurnPrediction>& predictions,
                      const Corpus& gold, const Ontology& ontology) {
  const auto by_turn = index_predictions(predictions, gold, ontology);
  int64_t turns = 0, correct = 0;
  for (const auto& d : gold.dialogues) {
    for (const auto& turn : d.turns) {
      const TurnPrediction& p = *by_turn.at({d.id, turn.index});
      bool all = true;
      for (int j = 0; j < ontology.slot_count(); ++j)
        if (p.values[static_cast<std::size_t>(j)] != gold_value(turn, ontology.slots[static_cast<std::size_t>(j)]))
          all = false;
      ++turns;
      if (all) ++correct;
    }
  }
  return ratio(correct, turns);
}

double slot_accuracy(const std::vector<TurnPrediction>& predictions,
                     const Corpus& gold, const Ontology& ontology) {
  const auto by_turn = index_predictions(predictions, gold, ontology);
  int64_t pairs = 0, correct = 0;
  for (const auto& d : gold.dialogues) {
    for (const auto& turn : d.turns) {
      const TurnPrediction& p = *by_turn.at({d.id, turn.index});
      for (int j = 0; j < ontology.slot_count(); ++j) {
        ++pairs;
        if (p.values[static_cast<std::size_t>(j)] == gold_value(turn, ontology.slots[static_cast<std::size_t>(j)]))
          ++correct;
      }
    }
  }
  return ratio(correct, pairs);
}

double alignment_accuracy(const std::vector<TurnPrediction>& predictions,
                          const Corpus& gold, const Ontology& ontology,
                          bool align_first_change) {
  const auto by_turn = index_predictions(predictions, gold, ontology);
  int64_t pairs = 0, correct = 0;
  for (const auto& d : gold.dialogues) {
    const auto labels = derive_alignment_labels(d, ontology, align_first_change);
    for (const auto& turn : d.turns) {
      const TurnPrediction& p = *by_turn.at({d.id, turn.index});
      const auto& target = labels[static_cast<std::size_t>(turn.index - 1)].target;
      for (int j = 0; j < ontology.slot_count(); ++j) {
        ++pairs;
        if (p.aligned_turn[static_cast<std::size_t>(j)] == target[static_cast<std::size_t>(j)])
          ++correct;
      }
    }
  }
  return ratio(correct, pairs);
}

std::vector<PerTurnBucket> per_turn_curve(const std::vector<TurnPrediction>& predictions,
                                          const Corpus& gold, const Ontology& ontology) {
  const auto by_turn = index_predictions(predictions, gold, ontology);
  std::map<int, PerTurnBucket> buckets;
  for (const auto& d : gold.dialogues) {
    for (const auto& turn : d.turns) {
      const TurnPrediction& p = *by_turn.at({d.id, turn.index});
      bool all = true;
      for (int j = 0; j < ontology.slot_count(); ++j)
        if (p.values[static_cast<std::size_t>(j)] != gold_value(turn, ontology.slots[static_cast<std::size_t>(j)]))
          all = false;
      PerTurnBucket& b = buckets[turn.index];
      b.depth = turn.index;
      ++b.turns;
      if (all) ++b.correct;
    }
  }
  std::vector<PerTurnBucket> out;
  out.reserve(buckets.size());
  for (const auto& [depth, b] : buckets) out.push_back(b);
  return out;
}

EvalReport make_report(const std::vector<TurnPrediction>& predictions,
                       const Corpus& gold, const Ontology& ontology,
                       bool align_first_change) {
  EvalReport r;
  r.joint_accuracy = joint_accuracy(predictions, gold, ontology);
  r.slot_accuracy = slot_accuracy(predictions, gold, ontology);
  r.alignment_accuracy = alignment_accuracy(predictions, gold, ontology, align_first_change);
  r.per_turn = per_turn_curve(predictions, gold, ontology);

  // dialogue-level variant: every (turn, slot) pair of the dialogue aligned
  const auto by_turn = index_predictions(predictions, gold, ontology);
  int64_t dialogues_right = 0;
  for (const auto& d : gold.dialogues) {
    const auto labels = derive_alignment_labels(d, ontology, align_first_change);
    bool all = true;
    for (const auto& turn : d.turns) {
      const TurnPrediction& p = *by_turn.at({d.id, turn.index});
      const auto& target = labels[static_cast<std::size_t>(turn.index - 1)].target;
      for (int j = 0; j < ontology.slot_count(); ++j)
        if (p.aligned_turn[static_cast<std::size_t>(j)] != target[static_cast<std::size_t>(j)])
          all = false;
    }
    if (all) ++dialogues_right;
    r.n_turns += static_cast<int64_t>(d.turns.size());
  }
  r.n_dialogues = static_cast<int64_t>(gold.dialogues.size());
  r.n_slots = ontology.slot_count();
  r.alignment_accuracy_dialogue = ratio(dialogues_right, r.n_dialogues);
  return r;
}

std::string EvalReport::to_json_text() const {
  nlohmann::json j;
  j["joint_accuracy"] = joint_accuracy;
  j["slot_accuracy"] = slot_accuracy;
  j["alignment_accuracy"] = alignment_accuracy;
  j["alignment_accuracy_dialogue"] = alignment_accuracy_dialogue;
  j["n_dialogues"] = n_dialogues;
  j["n_turns"] = n_turns;
  j["n_slots"] = n_slots;
  auto& curve = j["per_turn"] = nlohmann::json::array();
  for (const auto& b : per_turn)
    curve.push_back({{"depth", b.depth}, {"turns", b.turns}, {"correct", b.correct},
                     {"joint_accuracy", b.accuracy()}});
  return j.dump(2);
}

std::string EvalReport::per_turn_csv() const {
  std::string out = "depth,n,joint_accuracy\n";
  char line[96];
  for (const auto& b : per_turn) {
    std::snprintf(line, sizeof(line), "%d,%lld,%.17g\n", b.depth,
                  static_cast<long long>(b.turns), b.accuracy());
    out += line;
  }
  return out;
}

// ---- inference -------------------------------------------------------------

namespace {

// Decodes one dialogue turn by turn, chaining predicted alignments.
void decode_dialogue(LunaModel& model, const Dialogue& d,
                     std::vector<TurnPrediction>* out) {
  const Config& cfg = model.config();
  const auto labels = derive_alignment_labels(d, model.ontology(), cfg.align_first_change);
  std::vector<int> prev;  // empty for turn 1
  for (const auto& turn : d.turns) {
    const Example ex =
        build_example(d, turn.index, labels, model.ontology(), model.vocab(), cfg);
    const ModelOutput o = model.forward(ex, prev, /*with_losses=*/false);
    TurnPrediction p;
    p.dialogue_id = d.id;
    p.turn = turn.index;
    p.values = o.predicted_value;
    p.aligned_turn = o.predicted_turn;
    prev = o.predicted_turn;
    out->push_back(std::move(p));
  }
}

}  // namespace

EvalRun evaluate_model(LunaModel& model, const Corpus& corpus, int threads) {
  if (threads < 1) throw ContractError("evaluate_model: threads must be >= 1");
  model.refresh_schema();
  EvalRun run;
  {
    NoGradGuard guard;
    if (threads == 1 || corpus.dialogues.size() < 2) {
      for (const auto& d : corpus.dialogues) decode_dialogue(model, d, &run.predictions);
    } else {
      model.warm_caches();  // workers only read the cached encodings
      const auto n = corpus.dialogues.size();
      std::vector<std::vector<TurnPrediction>> parts(n);
      const auto workers = static_cast<std::size_t>(
          std::min<int>(threads, static_cast<int>(n)));
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          NoGradGuard worker_guard;
          for (std::size_t i = w; i < n; i += workers)
            decode_dialogue(model, corpus.dialogues[i], &parts[i]);
        });
      }
      for (auto& t : pool) t.join();
      for (auto& part : parts)
        for (auto& p : part) run.predictions.push_back(std::move(p));
    }
  }
  model.refresh_schema();
  run.report = make_report(run.predictions, corpus, model.ontology(),
                           model.config().align_first_change);
  return run;
}

double alignment_consistency_probe(LunaModel& model, const Corpus& corpus,
                                   int max_dialogues) {
  NoGradGuard guard;
  const Config& cfg = model.config();
  const Ontology& ont = model.ontology();
  int64_t probed = 0, unchanged = 0;
  int used = 0;
  for (const auto& d : corpus.dialogues) {
    if (used++ >= max_dialogues) break;
    const auto labels = derive_alignment_labels(d, ont, cfg.align_first_change);
    std::vector<int> prev;
    for (const auto& turn : d.turns) {
      const Example ex = build_example(d, turn.index, labels, ont, model.vocab(), cfg);
      const ModelOutput clean = model.forward(ex, prev, /*with_losses=*/false);
      const auto& target = labels[static_cast<std::size_t>(turn.index - 1)].target;
      for (int j = 0; j < ont.slot_count(); ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (clean.predicted_turn[ju] != target[ju]) continue;
        const Index keep = clean.predicted_turn[ju] == kBlankTarget
                               ? ex.seq.blank_row()
                               : ex.seq.row_of_turn(clean.predicted_turn[ju]);
        Example masked = ex;
        const auto rows = static_cast<Index>(masked.seq.spans.size());
        for (Index r = 0; r + 1 < rows; ++r) {  // turn rows only; blank stays
          if (r == keep) continue;
          const auto [start, len] = masked.seq.spans[static_cast<std::size_t>(r)];
          for (Index k = start; k < start + len; ++k)
            masked.seq.tokens[static_cast<std::size_t>(k)] = Vocab::kUnk;
        }
        const ModelOutput noisy = model.forward(masked, prev, /*with_losses=*/false);
        ++probed;
        if (noisy.predicted_value[ju] == clean.predicted_value[ju]) ++unchanged;
      }
      prev = clean.predicted_turn;
    }
  }
  return probed == 0 ? 1.0 : static_cast<double>(unchanged) / static_cast<double>(probed);
}

}  // namespace luna
