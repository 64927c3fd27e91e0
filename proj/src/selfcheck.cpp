#include "luna/selfcheck.hpp"

#include "luna/errors.hpp"
#include "luna/model.hpp"

namespace luna {
namespace {

Ontology shop_ontology() {
  Ontology ont;
  ont.slots = {"shop-color", "shop-item", "shop-size"};
  ont.values["shop-color"] = {"none", "dontcare", "red", "blue"};
  ont.values["shop-item"] = {"none", "dontcare", "pen", "book", "mug"};
  ont.values["shop-size"] = {"none", "dontcare", "small", "large"};
  ont.validate();
  return ont;
}

Corpus shop_corpus() {
  Corpus c;
  Dialogue d;
  d.id = "shop-fixture";
  Turn t1;
  t1.index = 1;
  t1.user = "i would like a red pen";
  t1.system = "sure a red pen";
  t1.state = {{"shop-color", "red"}, {"shop-item", "pen"}};
  Turn t2;
  t2.index = 2;
  t2.user = "a small one please";
  t2.system = "small it is";
  t2.state = {{"shop-color", "red"}, {"shop-item", "pen"}, {"shop-size", "small"}};
  d.turns = {t1, t2};
  d.domains = {"shop"};
  c.dialogues = {d};
  return c;
}

}  // namespace

std::vector<LossGradResult> alignment_grad_checks(const SelfCheckOptions& opts) {
  if (opts.d < 4 || opts.d % 4 != 0)
    throw ConfigError("grad check width must be a positive multiple of 4");

  const Ontology ontology = shop_ontology();
  const Corpus corpus = shop_corpus();
  const Vocab vocab = Vocab::build(corpus, ontology);

  Config cfg;
  cfg.d = opts.d;
  cfg.heads = 4;
  cfg.utt_layers = 1;
  cfg.schema_layers = 1;
  cfg.max_seq_len = 64;
  cfg.max_turns = 6;
  cfg.init_std = 0.08;
  cfg.soft_alignment = opts.soft;
  cfg.seed = opts.seed;
  cfg.validate();

  ParamStore store(opts.seed);
  LunaModel model(store, cfg, vocab, ontology);
  if (!opts.soft) {
    // push the per-slot turn distributions toward one-hot so the +-h probes
    // never flip the selected row
    store.at("align.out.w").mutable_value() *= 30.0;
  }

  const auto labels = derive_alignment_labels(corpus.dialogues[0], ontology);
  const Example ex =
      build_example(corpus.dialogues[0], 2, labels, ontology, vocab, cfg);

  int sabotage_calls = 0;
  auto loss_fn = [&](Tensor ModelOutput::* component) {
    return [&, component]() {
      model.refresh_schema();  // probes change values without stepping the store
      Tensor loss = model.forward(ex, ex.prev_targets, true).*component;
      if (opts.sabotage)
        loss = loss + Tensor::scalar(sabotage_calls++ % 2 == 0 ? 0.0 : 1e-3);
      return loss;
    };
  };

  const std::pair<const char*, Tensor ModelOutput::*> heads[] = {
      {"order", &ModelOutput::order_loss},
      {"align", &ModelOutput::align_loss},
      {"value", &ModelOutput::value_loss},
      {"joint", &ModelOutput::joint_loss},
  };

  std::vector<LossGradResult> out;
  for (const auto& [name, component] : heads) {
    LossGradResult r;
    r.loss = name;
    r.report = finite_diff_check(loss_fn(component), store.trainable(), opts.step,
                                 opts.coords_per_param, opts.seed);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace luna
