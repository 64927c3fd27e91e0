#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "luna/errors.hpp"
#include "luna/evaluator.hpp"
#include "luna/model.hpp"
#include "helpers.hpp"

using namespace luna;

namespace {

Ontology pair_ontology() {
  Ontology ont;
  ont.slots = {"cafe-drink", "cafe-size"};
  ont.values["cafe-drink"] = {"none", "dontcare", "tea", "coffee"};
  ont.values["cafe-size"] = {"none", "dontcare", "small", "large"};
  ont.validate();
  return ont;
}

// Two turns: drink set at turn 1, size added at turn 2.
Corpus pair_corpus() {
  Corpus c;
  Dialogue d;
  d.id = "cafe-1";
  Turn t1;
  t1.index = 1;
  t1.user = "i want tea";
  t1.system = "okay tea";
  t1.state = {{"cafe-drink", "tea"}};
  Turn t2;
  t2.index = 2;
  t2.user = "make it large";
  t2.system = "done";
  t2.state = {{"cafe-drink", "tea"}, {"cafe-size", "large"}};
  d.turns = {t1, t2};
  d.domains = {"cafe"};
  c.dialogues = {d};
  return c;
}

std::vector<TurnPrediction> gold_predictions(const Corpus& corpus,
                                             const Ontology& ont) {
  std::vector<TurnPrediction> preds;
  for (const auto& d : corpus.dialogues) {
    const auto labels = derive_alignment_labels(d, ont);
    for (const auto& turn : d.turns) {
      TurnPrediction p;
      p.dialogue_id = d.id;
      p.turn = turn.index;
      for (const auto& slot : ont.slots) {
        const auto it = turn.state.find(slot);
        p.values.push_back(it == turn.state.end() ? "none" : it->second);
      }
      p.aligned_turn = labels[static_cast<size_t>(turn.index - 1)].target;
      preds.push_back(p);
    }
  }
  return preds;
}

// Naive recounts, written independently of the library loops.
struct NaiveCounts {
  long long turns = 0, joint_hits = 0;
  long long pairs = 0, slot_hits = 0, align_hits = 0;
};

NaiveCounts naive_count(const std::vector<TurnPrediction>& preds,
                        const Corpus& corpus, const Ontology& ont) {
  std::map<std::pair<std::string, int>, const TurnPrediction*> at;
  for (const auto& p : preds) at[{p.dialogue_id, p.turn}] = &p;
  NaiveCounts n;
  for (const auto& d : corpus.dialogues) {
    const auto labels = derive_alignment_labels(d, ont);
    for (const auto& turn : d.turns) {
      const TurnPrediction* p = at.at({d.id, turn.index});
      int wrong = 0;
      for (size_t j = 0; j < ont.slots.size(); ++j) {
        std::string gold = "none";
        if (turn.state.count(ont.slots[j])) gold = turn.state.at(ont.slots[j]);
        ++n.pairs;
        if (p->values[j] == gold)
          ++n.slot_hits;
        else
          ++wrong;
        if (p->aligned_turn[j] == labels[static_cast<size_t>(turn.index - 1)].target[j])
          ++n.align_hits;
      }
      ++n.turns;
      if (wrong == 0) ++n.joint_hits;
    }
  }
  return n;
}

}  // namespace

TEST_SUITE("evaluator") {

TEST_CASE("joint and slot accuracy on the two-turn fixture") {
  const Ontology ont = pair_ontology();
  const Corpus corpus = pair_corpus();
  auto preds = gold_predictions(corpus, ont);

  CHECK(joint_accuracy(preds, corpus, ont) == 1.0);
  CHECK(slot_accuracy(preds, corpus, ont) == 1.0);
  CHECK(alignment_accuracy(preds, corpus, ont) == 1.0);

  preds[1].values[1] = "small";  // one wrong slot in the second turn
  CHECK(joint_accuracy(preds, corpus, ont) == 0.5);
  CHECK(slot_accuracy(preds, corpus, ont) == doctest::Approx(3.0 / 4.0).epsilon(1e-15));
}

TEST_CASE("alignment accuracy counts pairs, BLANK included") {
  const Ontology ont = pair_ontology();
  const Corpus corpus = pair_corpus();
  auto preds = gold_predictions(corpus, ont);
  // four (turn, slot) pairs in total; gold alignment is
  // t1: [1, BLANK], t2: [1, 2]
  REQUIRE(preds[0].aligned_turn == std::vector<int>{1, kBlankTarget});
  REQUIRE(preds[1].aligned_turn == std::vector<int>{1, 2});

  preds[0].aligned_turn[1] = 1;  // BLANK slot claimed as turn 1 -> wrong
  CHECK(alignment_accuracy(preds, corpus, ont) == 0.75);
}

TEST_CASE("metrics match naive recounts on random fixtures") {
  const SyntheticCorpus synth = generate_synthetic_corpus(11, 12, default_ontology_spec());
  const Ontology& ont = synth.ontology;
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<TurnPrediction> preds;
    for (const auto& d : synth.corpus.dialogues) {
      for (const auto& turn : d.turns) {
        TurnPrediction p;
        p.dialogue_id = d.id;
        p.turn = turn.index;
        for (const auto& slot : ont.slots) {
          const auto& cands = ont.candidates(slot);
          p.values.push_back(cands[rng() % cands.size()]);
          p.aligned_turn.push_back(static_cast<int>(rng() % (static_cast<uint64_t>(turn.index) + 1)));
        }
        preds.push_back(p);
      }
    }
    const NaiveCounts n = naive_count(preds, synth.corpus, ont);
    CHECK(joint_accuracy(preds, synth.corpus, ont) ==
          static_cast<double>(n.joint_hits) / static_cast<double>(n.turns));
    CHECK(slot_accuracy(preds, synth.corpus, ont) ==
          static_cast<double>(n.slot_hits) / static_cast<double>(n.pairs));
    CHECK(alignment_accuracy(preds, synth.corpus, ont) ==
          static_cast<double>(n.align_hits) / static_cast<double>(n.pairs));
  }
}

TEST_CASE("per-turn buckets aggregate back to the overall joint accuracy") {
  const SyntheticCorpus synth = generate_synthetic_corpus(3, 10, default_ontology_spec());
  const Ontology& ont = synth.ontology;
  std::mt19937_64 rng(77);
  std::vector<TurnPrediction> preds;
  for (const auto& d : synth.corpus.dialogues)
    for (const auto& turn : d.turns) {
      TurnPrediction p;
      p.dialogue_id = d.id;
      p.turn = turn.index;
      for (const auto& slot : ont.slots) {
        const auto& cands = ont.candidates(slot);
        // half gold, half random, so both bucket outcomes occur
        const auto it = turn.state.find(slot);
        const std::string gold = it == turn.state.end() ? "none" : it->second;
        p.values.push_back(rng() % 2 == 0 ? gold : cands[rng() % cands.size()]);
        p.aligned_turn.push_back(0);
      }
      preds.push_back(p);
    }

  const auto curve = per_turn_curve(preds, synth.corpus, ont);
  long long turns = 0, correct = 0;
  for (const auto& b : curve) {
    CHECK(b.turns > 0);
    turns += b.turns;
    correct += b.correct;
  }
  CHECK(joint_accuracy(preds, synth.corpus, ont) ==
        static_cast<double>(correct) / static_cast<double>(turns));

  SUBCASE("single-depth corpus collapses to one bucket") {
    const Ontology po = pair_ontology();
    Corpus one;
    Dialogue d = pair_corpus().dialogues[0];
    d.turns.resize(1);
    d.turns[0].state = {{"cafe-drink", "tea"}};
    one.dialogues = {d};
    const auto gp = gold_predictions(one, po);
    const auto c1 = per_turn_curve(gp, one, po);
    REQUIRE(c1.size() == 1);
    CHECK(c1[0].depth == 1);
    CHECK(c1[0].accuracy() == joint_accuracy(gp, one, po));
  }
}

TEST_CASE("report ignores dialogue and prediction ordering") {
  const SyntheticCorpus synth = generate_synthetic_corpus(9, 8, default_ontology_spec());
  auto preds = gold_predictions(synth.corpus, synth.ontology);
  // make it imperfect so every metric is informative
  preds[3].values[2] = "dontcare";
  preds[5].aligned_turn[0] = 1;
  const EvalReport a = make_report(preds, synth.corpus, synth.ontology);

  Corpus reversed = synth.corpus;
  std::reverse(reversed.dialogues.begin(), reversed.dialogues.end());
  std::reverse(preds.begin(), preds.end());
  const EvalReport b = make_report(preds, reversed, synth.ontology);

  CHECK(a.joint_accuracy == b.joint_accuracy);
  CHECK(a.slot_accuracy == b.slot_accuracy);
  CHECK(a.alignment_accuracy == b.alignment_accuracy);
  CHECK(a.alignment_accuracy_dialogue == b.alignment_accuracy_dialogue);
  REQUIRE(a.per_turn.size() == b.per_turn.size());
  for (size_t i = 0; i < a.per_turn.size(); ++i) {
    CHECK(a.per_turn[i].depth == b.per_turn[i].depth);
    CHECK(a.per_turn[i].turns == b.per_turn[i].turns);
    CHECK(a.per_turn[i].correct == b.per_turn[i].correct);
  }
}

TEST_CASE("coverage violations raise contract errors") {
  const Ontology ont = pair_ontology();
  const Corpus corpus = pair_corpus();
  auto preds = gold_predictions(corpus, ont);

  SUBCASE("missing turn") {
    preds.pop_back();
    CHECK_THROWS_AS(joint_accuracy(preds, corpus, ont), ContractError);
  }
  SUBCASE("duplicate turn") {
    preds.push_back(preds[0]);
    CHECK_THROWS_AS(slot_accuracy(preds, corpus, ont), ContractError);
  }
  SUBCASE("short slot vector") {
    preds[0].values.pop_back();
    CHECK_THROWS_AS(alignment_accuracy(preds, corpus, ont), ContractError);
  }
}

TEST_CASE("report serializes to JSON and per-turn CSV") {
  const Ontology ont = pair_ontology();
  const Corpus corpus = pair_corpus();
  const EvalReport r = make_report(gold_predictions(corpus, ont), corpus, ont);

  const auto j = nlohmann::json::parse(r.to_json_text());
  CHECK(j.at("joint_accuracy").get<double>() == 1.0);
  CHECK(j.at("n_turns").get<long long>() == 2);
  CHECK(j.at("per_turn").size() == 2);

  const std::string csv = r.per_turn_csv();
  CHECK(csv.rfind("depth,n,joint_accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("model evaluation decodes every turn and stays deterministic") {
  const SyntheticCorpus synth = generate_synthetic_corpus(21, 5, default_ontology_spec());
  Config cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.utt_layers = 1;
  cfg.schema_layers = 1;
  cfg.n_slot_sa = 2;
  cfg.n_turn_sa = 1;
  cfg.max_seq_len = 96;
  cfg.max_turns = 10;
  cfg.init_std = 0.08;
  const Vocab vocab = Vocab::build(synth.corpus, synth.ontology);
  ParamStore store(5);
  LunaModel model(store, cfg, vocab, synth.ontology);

  const EvalRun run = evaluate_model(model, synth.corpus);
  size_t turns = 0;
  for (const auto& d : synth.corpus.dialogues) turns += d.turns.size();
  REQUIRE(run.predictions.size() == turns);
  for (const auto& p : run.predictions) {
    for (size_t j = 0; j < synth.ontology.slots.size(); ++j) {
      const auto& cands = synth.ontology.candidates(synth.ontology.slots[j]);
      CHECK(std::find(cands.begin(), cands.end(), p.values[j]) != cands.end());
      CHECK(p.aligned_turn[j] >= kBlankTarget);
      CHECK(p.aligned_turn[j] <= p.turn);
    }
  }
  CHECK(run.report.joint_accuracy >= 0.0);
  CHECK(run.report.joint_accuracy <= 1.0);

  SUBCASE("second run is bitwise identical") {
    const EvalRun again = evaluate_model(model, synth.corpus);
    REQUIRE(again.predictions.size() == run.predictions.size());
    for (size_t i = 0; i < run.predictions.size(); ++i) {
      CHECK(again.predictions[i].values == run.predictions[i].values);
      CHECK(again.predictions[i].aligned_turn == run.predictions[i].aligned_turn);
    }
    CHECK(again.report.joint_accuracy == run.report.joint_accuracy);
  }
  SUBCASE("worker pool reproduces the single-thread result") {
    const EvalRun pooled = evaluate_model(model, synth.corpus, 3);
    REQUIRE(pooled.predictions.size() == run.predictions.size());
    for (size_t i = 0; i < run.predictions.size(); ++i) {
      CHECK(pooled.predictions[i].dialogue_id == run.predictions[i].dialogue_id);
      CHECK(pooled.predictions[i].turn == run.predictions[i].turn);
      CHECK(pooled.predictions[i].values == run.predictions[i].values);
      CHECK(pooled.predictions[i].aligned_turn == run.predictions[i].aligned_turn);
    }
    CHECK(pooled.report.alignment_accuracy == run.report.alignment_accuracy);
  }
  SUBCASE("consistency probe yields a fraction") {
    const double frac = alignment_consistency_probe(model, synth.corpus, 3);
    CHECK(frac >= 0.0);
    CHECK(frac <= 1.0);
    CHECK(alignment_consistency_probe(model, synth.corpus, 3) == frac);
  }
}

}  // TEST_SUITE
