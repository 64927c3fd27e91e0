#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "luna/ablation.hpp"
#include "luna/checkpoint.hpp"
#include "luna/errors.hpp"
#include "luna/evaluator.hpp"
#include "luna/selfcheck.hpp"
#include "luna/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

bool quiet_logs() {
  const char* level = std::getenv("LUNA_LOG");
  return level != nullptr && std::string(level) == "quiet";
}

std::string utc_now() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw luna::IoError("cannot write " + path);
  out << text;
}

// Every run directory carries a manifest describing how it was produced.
void write_manifest(const std::string& dir, const std::string& command,
                    const luna::Config& cfg,
                    const std::vector<std::string>& outputs) {
  const std::string cfg_text = cfg.to_json_text();
  json m;
  m["command"] = command;
  m["seed"] = cfg.seed;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(
                    luna::fnv1a64(cfg_text.data(), cfg_text.size())));
  m["config_fnv1a"] = hash;
  m["config"] = json::parse(cfg_text);
  m["artifact_version"] = 1;
  m["timestamp_utc"] = utc_now();
  m["outputs"] = outputs;
  write_text(dir + "/manifest.json", m.dump(2) + "\n");
}

luna::Config load_config_flag(const std::string& path, bool paper_hparams,
                              int64_t seed_override) {
  luna::Config cfg;
  if (!path.empty()) cfg = luna::Config::load(path);
  if (paper_hparams) cfg = cfg.with_paper_hparams();
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  cfg.validate();
  return cfg;
}

std::string sibling_ontology(const std::string& corpus_path,
                             const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  return (fs::path(corpus_path).parent_path() / "ontology.json").string();
}

json mat_to_json(const luna::Mat& m) {
  json rows = json::array();
  for (luna::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (luna::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- gen-corpus -------------------------------------------------------------

int cmd_gen_corpus(uint64_t seed, int n, const std::string& out_dir,
                   const std::string& spec_path, bool force) {
  const luna::OntologySpec spec = spec_path.empty()
                                      ? luna::default_ontology_spec()
                                      : luna::load_ontology_spec(spec_path);
  const luna::SyntheticCorpus synth = luna::generate_synthetic_corpus(seed, n, spec);

  fs::create_directories(out_dir);
  const std::string corpus_path = out_dir + "/corpus.json";
  const std::string ontology_path = out_dir + "/ontology.json";
  if (!force && (fs::exists(corpus_path) || fs::exists(ontology_path)))
    throw luna::IoError(out_dir + " already holds a corpus; pass --force to overwrite");
  luna::save_ontology(synth.ontology, ontology_path);
  luna::save_corpus(synth.corpus, corpus_path);

  luna::Config manifest_cfg;
  manifest_cfg.seed = seed;
  write_manifest(out_dir, "gen-corpus", manifest_cfg,
                 {"corpus.json", "ontology.json"});
  std::printf("wrote %zu dialogues (%d with cross-domain value confusion) to %s\n",
              synth.corpus.dialogues.size(), synth.confusion_dialogues,
              out_dir.c_str());
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const std::string& corpus_path, const std::string& ontology_path,
              const std::string& config_path, bool paper_hparams,
              int64_t seed_override, const std::string& out_dir,
              const std::string& resume, int threads, bool quiet) {
  const luna::Config cfg = load_config_flag(config_path, paper_hparams, seed_override);
  const luna::Ontology ontology =
      luna::load_ontology(sibling_ontology(corpus_path, ontology_path));
  const luna::Corpus corpus = luna::load_corpus(corpus_path, ontology);

  fs::create_directories(out_dir);
  luna::TrainOptions opts;
  opts.loss_log_path = out_dir + "/loss.csv";
  opts.best_checkpoint_path = out_dir + "/checkpoint.bin";
  opts.last_checkpoint_path = out_dir + "/last.bin";
  opts.resume_path = resume;
  opts.eval_threads = threads;
  if (!quiet && !quiet_logs()) opts.progress = &std::cerr;

  const luna::TrainResult res = luna::train_model(corpus, cfg, ontology, opts);

  json summary;
  summary["epochs_run"] = res.epochs_run;
  summary["epochs_done"] = res.epochs_done;
  summary["best_epoch"] = res.best_epoch;
  summary["best_dev_joint_accuracy"] = res.best_dev_joint;
  summary["early_stopped"] = res.early_stopped;
  summary["global_step"] = res.global_step;
  json epochs = json::array();
  for (const auto& e : res.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_joint_loss", e.train_joint_loss},
                      {"dev_joint_accuracy", e.dev_joint_accuracy},
                      {"dev_alignment_accuracy", e.dev_alignment_accuracy}});
  summary["epochs"] = std::move(epochs);
  write_text(out_dir + "/train.json", summary.dump(2) + "\n");
  write_manifest(out_dir, "train", cfg,
                 {"checkpoint.bin", "last.bin", "loss.csv", "train.json"});
  std::printf("best dev joint accuracy %.4f at epoch %d (%lld steps)\n",
              res.best_dev_joint, res.best_epoch,
              static_cast<long long>(res.global_step));
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

void dump_attention(luna::LunaModel& model, const luna::Corpus& corpus,
                    const std::string& path, int max_turns_dumped) {
  luna::NoGradGuard guard;
  const luna::Config& cfg = model.config();
  json all = json::array();
  int dumped = 0;
  for (const auto& d : corpus.dialogues) {
    if (dumped >= max_turns_dumped) break;
    const auto labels =
        luna::derive_alignment_labels(d, model.ontology(), cfg.align_first_change);
    std::vector<int> prev;
    for (const auto& turn : d.turns) {
      if (dumped >= max_turns_dumped) break;
      const luna::Example ex = luna::build_example(d, turn.index, labels,
                                                   model.ontology(), model.vocab(), cfg);
      luna::Diagnostics diag;
      const luna::ModelOutput out = model.forward(ex, prev, false, &diag);
      prev = out.predicted_turn;

      json e;
      e["dialogue"] = d.id;
      e["turn"] = turn.index;
      json tokens = json::array();
      for (const int id : ex.seq.tokens)
        tokens.push_back(model.vocab().id_to_token[static_cast<size_t>(id)]);
      e["tokens"] = std::move(tokens);
      e["slots"] = model.ontology().slots;
      json heads = json::array();
      for (const auto& h : diag.token_attention) heads.push_back(mat_to_json(h));
      e["slot_token_attention"] = std::move(heads);
      json dists = json::array();
      for (const auto& dist : diag.align_dist) dists.push_back(mat_to_json(dist));
      e["turn_alignment"] = std::move(dists);
      all.push_back(std::move(e));
      ++dumped;
    }
  }
  write_text(path, all.dump() + "\n");
}

int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_path,
             const std::string& out_dir, bool dump_predictions,
             bool dump_attention_flag, int threads) {
  const luna::Checkpoint ck = luna::load_checkpoint(checkpoint_path);
  const auto lm = luna::restore_model(ck);
  const luna::Corpus corpus = luna::load_corpus(corpus_path, lm->ontology);

  fs::create_directories(out_dir);
  const luna::EvalRun run = luna::evaluate_model(*lm->model, corpus, threads);
  std::vector<std::string> outputs = {"report.json", "per-turn.csv"};

  json report = json::parse(run.report.to_json_text());
  report["consistency_probe"] =
      luna::alignment_consistency_probe(*lm->model, corpus, 4);
  write_text(out_dir + "/report.json", report.dump(2) + "\n");
  write_text(out_dir + "/per-turn.csv", run.report.per_turn_csv());

  if (dump_predictions) {
    json preds = json::array();
    for (const auto& p : run.predictions) {
      json e;
      e["dialogue"] = p.dialogue_id;
      e["turn"] = p.turn;
      json values = json::object();
      json aligned = json::object();
      for (size_t j = 0; j < lm->ontology.slots.size(); ++j) {
        values[lm->ontology.slots[j]] = p.values[j];
        aligned[lm->ontology.slots[j]] = p.aligned_turn[j];
      }
      e["values"] = std::move(values);
      e["aligned_turn"] = std::move(aligned);
      preds.push_back(std::move(e));
    }
    write_text(out_dir + "/predictions.json", preds.dump(2) + "\n");
    outputs.push_back("predictions.json");
  }
  if (dump_attention_flag) {
    dump_attention(*lm->model, corpus, out_dir + "/attention.json", 16);
    outputs.push_back("attention.json");
  }
  write_manifest(out_dir, "eval", lm->config, outputs);
  std::printf("joint %.4f  slot %.4f  alignment %.4f (dialogue-level %.4f)\n",
              run.report.joint_accuracy, run.report.slot_accuracy,
              run.report.alignment_accuracy, run.report.alignment_accuracy_dialogue);
  return kExitOk;
}

// ---- grad-check ---------------------------------------------------------------

int cmd_grad_check(int d, int coords, uint64_t seed, bool soft, double tolerance) {
  luna::SelfCheckOptions opts;
  opts.d = d;
  opts.coords_per_param = coords;
  opts.seed = seed;
  opts.soft = soft;
  opts.sabotage = std::getenv("LUNA_GRAD_BREAK") != nullptr;

  const auto results = luna::alignment_grad_checks(opts);
  bool ok = true;
  for (const auto& r : results) {
    const auto& w = r.report.worst;
    std::printf(
        "loss %-5s  max rel err %.3e over %lld coords (worst %s[%lld,%lld] "
        "analytic=%.9g numeric=%.9g)\n",
        r.loss.c_str(), r.report.max_rel_err,
        static_cast<long long>(r.report.coords_checked), w.param.c_str(),
        static_cast<long long>(w.row), static_cast<long long>(w.col), w.analytic,
        w.numeric);
    ok = ok && r.report.pass(tolerance);
  }
  std::printf("gradient check %s at tolerance %g\n", ok ? "PASSED" : "FAILED",
              tolerance);
  return ok ? kExitOk : kExitNumeric;
}

// ---- ablate -------------------------------------------------------------------

int cmd_ablate(const std::string& corpus_path, const std::string& eval_path,
               const std::string& ontology_path, const std::string& config_path,
               bool paper_hparams, int64_t seed_override, int n_seeds,
               const std::string& out_dir, bool quiet) {
  const luna::Config cfg = load_config_flag(config_path, paper_hparams, seed_override);
  const luna::Ontology ontology =
      luna::load_ontology(sibling_ontology(corpus_path, ontology_path));
  const luna::Corpus train_corpus = luna::load_corpus(corpus_path, ontology);
  const luna::Corpus eval_corpus = luna::load_corpus(eval_path, ontology);

  std::vector<uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(cfg.seed + static_cast<uint64_t>(i));

  fs::create_directories(out_dir);
  std::ostream* progress = (!quiet && !quiet_logs()) ? &std::cerr : nullptr;
  const auto rows = luna::run_ablations(train_corpus, eval_corpus, cfg, ontology,
                                        seeds, out_dir, progress);
  const std::string csv = luna::ablation_csv(rows);
  write_text(out_dir + "/ablation.csv", csv);
  write_manifest(out_dir, "ablate", cfg, {"ablation.csv"});
  std::fputs(csv.c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"luna: slot-turn-alignment dialogue state tracker"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic dialogue corpus");
  uint64_t gen_seed = 1;
  int gen_n = 100;
  std::string gen_out, gen_spec;
  bool gen_force = false;
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--n", gen_n, "number of dialogues")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--ontology-spec", gen_spec, "domain/slot/value spec JSON");
  gen->add_flag("--force", gen_force, "overwrite existing corpus files");

  // train
  auto* train = app.add_subcommand("train", "train the tracker on a corpus");
  std::string tr_corpus, tr_ontology, tr_config, tr_out, tr_resume;
  bool tr_paper = false, tr_quiet = false;
  int64_t tr_seed = -1;
  int tr_threads = 1;
  train->add_option("--corpus", tr_corpus, "training corpus JSON")->required();
  train->add_option("--ontology", tr_ontology, "ontology JSON (default: sibling ontology.json)");
  train->add_option("--config", tr_config, "config JSON (defaults otherwise)");
  train->add_option("--out", tr_out, "run directory")->required();
  train->add_option("--resume", tr_resume, "continue from a last-state checkpoint");
  train->add_option("--seed", tr_seed, "override the config seed");
  train->add_option("--threads", tr_threads, "dev evaluation workers")->check(CLI::PositiveNumber);
  train->add_flag("--paper-hparams", tr_paper, "use the published learning rates");
  train->add_flag("--quiet", tr_quiet, "suppress per-epoch progress");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  std::string ev_ckpt, ev_corpus, ev_out;
  bool ev_preds = false, ev_attn = false;
  int ev_threads = 1;
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--corpus", ev_corpus, "evaluation corpus JSON")->required();
  eval->add_option("--out", ev_out, "output directory")->required();
  eval->add_flag("--dump-predictions", ev_preds, "write per-turn predictions JSON");
  eval->add_flag("--dump-attention", ev_attn, "write slot/token attention maps");
  eval->add_option("--threads", ev_threads, "evaluation workers")->check(CLI::PositiveNumber);

  // grad-check
  auto* grad = app.add_subcommand("grad-check", "verify gradients of all loss heads");
  int gc_d = 16, gc_coords = 6;
  uint64_t gc_seed = 11;
  bool gc_soft = false;
  double gc_tol = 1e-3;
  grad->add_option("--d", gc_d, "model width (multiple of 4)");
  grad->add_option("--coords", gc_coords, "checked coordinates per parameter")->check(CLI::PositiveNumber);
  grad->add_option("--seed", gc_seed, "fixture seed");
  grad->add_option("--tolerance", gc_tol, "max allowed relative error");
  grad->add_flag("--soft", gc_soft, "check the soft-alignment path");

  // ablate
  auto* abl = app.add_subcommand("ablate", "train/evaluate the model and its ablations");
  std::string ab_corpus, ab_eval, ab_ontology, ab_config, ab_out;
  bool ab_paper = false, ab_quiet = false;
  int64_t ab_seed = -1;
  int ab_seeds = 3;
  abl->add_option("--corpus", ab_corpus, "training corpus JSON")->required();
  abl->add_option("--eval-corpus", ab_eval, "held-out corpus JSON")->required();
  abl->add_option("--ontology", ab_ontology, "ontology JSON (default: sibling ontology.json)");
  abl->add_option("--config", ab_config, "base config JSON");
  abl->add_option("--out", ab_out, "output directory")->required();
  abl->add_option("--seed", ab_seed, "override the base seed");
  abl->add_option("--seeds", ab_seeds, "seeds per variant")->check(CLI::PositiveNumber);
  abl->add_flag("--paper-hparams", ab_paper, "use the published learning rates");
  abl->add_flag("--quiet", ab_quiet, "suppress progress lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_corpus(gen_seed, gen_n, gen_out, gen_spec, gen_force);
    if (train->parsed())
      return cmd_train(tr_corpus, tr_ontology, tr_config, tr_paper, tr_seed,
                       tr_out, tr_resume, tr_threads, tr_quiet);
    if (eval->parsed())
      return cmd_eval(ev_ckpt, ev_corpus, ev_out, ev_preds, ev_attn, ev_threads);
    if (grad->parsed())
      return cmd_grad_check(gc_d, gc_coords, gc_seed, gc_soft, gc_tol);
    if (abl->parsed())
      return cmd_ablate(ab_corpus, ab_eval, ab_ontology, ab_config, ab_paper,
                        ab_seed, ab_seeds, ab_out, ab_quiet);
  } catch (const luna::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const luna::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitOk;
}
