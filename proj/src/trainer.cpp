#include "luna/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include <json.hpp>

#include "luna/errors.hpp"
#include "luna/model.hpp"
#include "luna/optim.hpp"

namespace luna {
namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Fisher-Yates on a splitmix stream; self-contained so the order never
// depends on the standard library's shuffle internals.
void deterministic_shuffle(std::vector<std::size_t>* v, uint64_t seed) {
  uint64_t state = seed;
  auto next = [&state] { return state = splitmix64(state); };
  for (std::size_t i = v->size(); i > 1; --i)
    std::swap((*v)[i - 1], (*v)[next() % i]);
}

std::string csv_row(int64_t step, double order, double align, double value,
                    double joint, double lr) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<long long>(step), order, align, value, joint, lr);
  return buf;
}

void require_same_run(const Config& cfg, const Checkpoint& ck,
                      const Ontology& ontology) {
  nlohmann::json a = nlohmann::json::parse(cfg.to_json_text());
  nlohmann::json b = nlohmann::json::parse(ck.config.to_json_text());
  a.erase("epochs");
  b.erase("epochs");
  if (a != b)
    throw ConfigError(
        "resume checkpoint was trained with a different config (only 'epochs' "
        "may change)");
  if (ck.ontology.slots != ontology.slots || ck.ontology.values != ontology.values)
    throw DataError("resume checkpoint ontology differs from the corpus ontology");
}

}  // namespace

std::vector<std::size_t> epoch_permutation(std::size_t n, uint64_t seed, int epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  deterministic_shuffle(&perm, splitmix64(seed) ^ splitmix64(0x5e65 + static_cast<uint64_t>(epoch)));
  return perm;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double dev_fraction,
                                       uint64_t seed) {
  if (dev_fraction < 0.0 || dev_fraction >= 1.0)
    throw ConfigError("dev fraction must be in [0, 1)");
  const std::size_t n = corpus.dialogues.size();
  std::size_t k = dev_fraction <= 0.0
                      ? 0
                      : static_cast<std::size_t>(
                            std::ceil(dev_fraction * static_cast<double>(n)));
  if (k >= n) k = n == 0 ? 0 : n - 1;  // training keeps at least one dialogue

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  deterministic_shuffle(&idx, splitmix64(seed) ^ 0x6465762d73706c69ULL);
  const std::set<std::size_t> dev_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));

  std::pair<Corpus, Corpus> out;
  for (std::size_t i = 0; i < n; ++i)
    (dev_idx.count(i) ? out.second : out.first).dialogues.push_back(corpus.dialogues[i]);
  return out;
}

TrainResult train_model(const Corpus& corpus, const Config& cfg,
                        const Ontology& ontology, const TrainOptions& opts) {
  cfg.validate();
  ontology.validate();
  if (corpus.dialogues.empty()) throw DataError("training corpus is empty");

  Checkpoint resumed;
  const bool resuming = !opts.resume_path.empty();
  if (resuming) {
    resumed = load_checkpoint(opts.resume_path);
    require_same_run(cfg, resumed, ontology);
  }

  auto [train_corpus, dev_corpus] = split_corpus(corpus, cfg.dev_fraction, cfg.seed);
  // model selection falls back to the training split when dev is empty
  const Corpus& selection = dev_corpus.dialogues.empty() ? train_corpus : dev_corpus;

  const Vocab vocab = resuming ? Vocab::from_tokens(resumed.vocab_tokens)
                               : Vocab::build(train_corpus, ontology);
  const std::vector<Example> examples = build_examples(train_corpus, ontology, vocab, cfg);
  if (examples.empty()) throw DataError("training split has no turns");

  const std::size_t n = examples.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const int64_t steps_per_epoch = static_cast<int64_t>((n + batch - 1) / batch);
  const int64_t total_steps = steps_per_epoch * cfg.epochs;

  ParamStore store(cfg.seed);
  LunaModel model(store, cfg, vocab, ontology);
  Adam opt(store, {{"utt.", cfg.peak_lr_encoder}, {"", cfg.peak_lr_rest}},
           total_steps, cfg.warmup_proportion);

  TrainResult res;
  int start_epoch = 0;
  int64_t gstep = 0;
  bool new_best = false;
  int bad_epochs = 0;  // not persisted: patience restarts after a resume
  if (resuming) {
    restore_parameters(resumed, store);
    restore_optimizer(resumed, opt);
    start_epoch = resumed.epochs_done;
    gstep = resumed.global_step;
    res.best_dev_joint = resumed.best_dev_joint;
  }

  auto stamp = [&](Checkpoint ck, int epochs_done) {
    ck.global_step = gstep;
    ck.total_steps = total_steps;
    ck.epochs_done = epochs_done;
    ck.best_dev_joint = res.best_dev_joint;
    return ck;
  };

  res.loss_csv.push_back("step,order_loss,align_loss,value_loss,joint_loss,lr");
  res.epochs_done = start_epoch;
  res.last = stamp(snapshot_checkpoint(store, &opt, cfg, vocab, ontology), start_epoch);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    model.refresh_schema();
    const auto perm = epoch_permutation(n, cfg.seed, epoch);

    double epoch_joint = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t bsz = std::min(batch, n - b0);
      store.zero_grads();
      Tensor total = Tensor::scalar(0.0);
      double order_sum = 0.0, align_sum = 0.0, value_sum = 0.0;
      for (std::size_t i = b0; i < b0 + bsz; ++i) {
        const Example& ex = examples[perm[i]];
        const ModelOutput out = model.forward(ex, ex.prev_targets, /*with_losses=*/true);
        total = total + out.joint_loss;
        order_sum += out.order_loss.item();
        align_sum += out.align_loss.item();
        value_sum += out.value_loss.item();
      }
      total = scale(total, 1.0 / static_cast<double>(bsz));
      const double joint = total.item();
      if (!std::isfinite(joint))
        throw NumericError("training diverged at step " + std::to_string(gstep + 1) +
                           " (joint loss is not finite)");
      const double lr = opt.next_lr("value.proj.w");  // "rest" group
      total.backward();
      opt.step();
      ++gstep;
      const auto b = static_cast<double>(bsz);
      res.loss_csv.push_back(
          csv_row(gstep, order_sum / b, align_sum / b, value_sum / b, joint, lr));
      epoch_joint += joint;
    }

    const EvalRun dev = evaluate_model(model, selection, opts.eval_threads);
    EpochLog log;
    log.epoch = epoch + 1;
    log.train_joint_loss = epoch_joint / static_cast<double>(steps_per_epoch);
    log.dev_joint_accuracy = dev.report.joint_accuracy;
    log.dev_alignment_accuracy = dev.report.alignment_accuracy;
    res.epochs.push_back(log);
    ++res.epochs_run;
    res.epochs_done = epoch + 1;

    if (dev.report.joint_accuracy > res.best_dev_joint) {
      res.best_dev_joint = dev.report.joint_accuracy;
      res.best_epoch = epoch + 1;
      bad_epochs = 0;
      new_best = true;
      res.best = stamp(snapshot_checkpoint(store, &opt, cfg, vocab, ontology), epoch + 1);
    } else {
      ++bad_epochs;
    }
    res.last = stamp(snapshot_checkpoint(store, &opt, cfg, vocab, ontology), epoch + 1);
    if (!opts.last_checkpoint_path.empty())
      save_checkpoint(res.last, opts.last_checkpoint_path);

    if (opts.progress) {
      char line[160];
      std::snprintf(line, sizeof(line),
                    "epoch %d/%d  train joint loss %.4f  dev joint acc %.4f  dev align acc %.4f",
                    epoch + 1, cfg.epochs, log.train_joint_loss,
                    log.dev_joint_accuracy, log.dev_alignment_accuracy);
      (*opts.progress) << line << std::endl;
    }

    if (bad_epochs > cfg.early_stop_patience) {
      res.early_stopped = true;
      break;
    }
  }

  res.global_step = gstep;
  if (!new_best) res.best = res.last;
  if (new_best && !opts.best_checkpoint_path.empty())
    save_checkpoint(res.best, opts.best_checkpoint_path);

  if (!opts.loss_log_path.empty()) {
    std::ofstream out(opts.loss_log_path, std::ios::trunc);
    if (!out) throw IoError("cannot open loss log for writing: " + opts.loss_log_path);
    for (const auto& line : res.loss_csv) out << line << '\n';
  }
  return res;
}

}  // namespace luna
