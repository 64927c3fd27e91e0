#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "luna/corpus.hpp"

namespace luna {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

int pick(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

template <typename T>
const T& pick_from(std::mt19937_64& rng, const std::vector<T>& pool) {
  return pool[static_cast<size_t>(pick(rng, 0, static_cast<int>(pool.size()) - 1))];
}

const std::vector<std::string> kUpdateTemplates = {
    "i am looking for a {d} with {s} {v}",
    "i want the {d} {s} to be {v}",
    "find me a {d} whose {s} is {v}",
    "please set the {d} {s} to {v}",
};
const std::vector<std::string> kIdleUser = {
    "thank you",
    "what do you suggest",
    "tell me more",
    "that sounds good",
};
const std::vector<std::string> kAckSystem = {
    "okay i will note that down",
    "sure let me update your request",
    "got it i am on that",
};
const std::vector<std::string> kIdleSystem = {
    "is there anything else i can do",
    "you are welcome",
    "happy to help",
};

std::string expand(const std::string& tmpl, const std::string& domain,
                   const std::string& slot_word, const std::string& value) {
  std::string out = tmpl;
  auto replace = [&out](const std::string& key, const std::string& with) {
    const auto at = out.find(key);
    out.replace(at, key.size(), with);
  };
  replace("{d}", domain);
  replace("{s}", slot_word);
  replace("{v}", value);
  return out;
}

struct ConfusionPlan {
  std::string domain_a, domain_b, slot_word;
  std::vector<std::string> shared_values;
};

std::vector<ConfusionPlan> shared_value_pairs(const OntologySpec& spec) {
  std::vector<ConfusionPlan> plans;
  for (auto a = spec.domains.begin(); a != spec.domains.end(); ++a)
    for (auto b = std::next(a); b != spec.domains.end(); ++b)
      for (const auto& [slot_word, values_a] : a->second) {
        auto it = b->second.find(slot_word);
        if (it == b->second.end()) continue;
        std::vector<std::string> shared;
        for (const std::string& v : values_a)
          if (std::find(it->second.begin(), it->second.end(), v) !=
              it->second.end())
            shared.push_back(v);
        if (!shared.empty())
          plans.push_back({a->first, b->first, slot_word, std::move(shared)});
      }
  return plans;
}

}  // namespace

void OntologySpec::validate() const {
  if (domains.size() < 2)
    throw ConfigError("ontology spec: need at least 2 domains");
  for (const auto& [domain, slots] : domains) {
    if (domain.empty() || domain.find('-') != std::string::npos)
      throw ConfigError("ontology spec: bad domain name '" + domain + "'");
    if (slots.size() < 3)
      throw ConfigError("ontology spec: domain '" + domain +
                        "' needs at least 3 slots");
    for (const auto& [slot_word, values] : slots) {
      if (slot_word.empty())
        throw ConfigError("ontology spec: empty slot name in '" + domain + "'");
      if (values.size() < 4)
        throw ConfigError("ontology spec: slot '" + domain + "-" + slot_word +
                          "' needs at least 4 values");
      std::set<std::string> unique(values.begin(), values.end());
      if (unique.size() != values.size())
        throw ConfigError("ontology spec: duplicate value under '" + domain + "-" +
                          slot_word + "'");
      if (unique.count("none") || unique.count("dontcare"))
        throw ConfigError("ontology spec: 'none'/'dontcare' are implicit and "
                          "cannot be listed under '" + domain + "-" + slot_word +
                          "'");
    }
  }
}

OntologySpec default_ontology_spec() {
  const std::vector<std::string> areas = {"centre", "south", "north", "east",
                                          "west"};
  const std::vector<std::string> prices = {"cheap", "moderate", "expensive",
                                           "luxury"};
  OntologySpec spec;
  spec.domains["restaurant"] = {
      {"area", areas},
      {"pricerange", prices},
      {"food", {"italian", "chinese", "indian", "british", "french"}},
  };
  spec.domains["hotel"] = {
      {"area", areas},
      {"pricerange", prices},
      {"stars", {"2", "3", "4", "5"}},
  };
  spec.domains["attraction"] = {
      {"area", areas},
      {"pricerange", prices},
      {"type", {"museum", "park", "cinema", "theatre", "swimming pool"}},
  };
  return spec;
}

OntologySpec load_ontology_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("ontology spec: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("ontology spec: invalid JSON: ") + e.what());
  }
  OntologySpec spec;
  try {
    for (const auto& [domain, slots] : j.items())
      for (const auto& [slot_word, values] : slots.items())
        spec.domains[domain][slot_word] =
            values.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("ontology spec: expected {domain: {slot: [values]}}");
  }
  spec.validate();
  return spec;
}

SyntheticCorpus generate_synthetic_corpus(uint64_t seed, int n_dialogues,
                                          const OntologySpec& spec) {
  spec.validate();
  if (n_dialogues < 1)
    throw ConfigError("synthetic corpus: n_dialogues must be >= 1");

  SyntheticCorpus out;
  auto& ontology = out.ontology;
  for (const auto& [domain, slots] : spec.domains)
    for (const auto& [slot_word, values] : slots) {
      const std::string slot = domain + "-" + slot_word;
      ontology.slots.push_back(slot);
      std::vector<std::string> cands = {"none", "dontcare"};
      cands.insert(cands.end(), values.begin(), values.end());
      ontology.values[slot] = std::move(cands);
    }
  std::sort(ontology.slots.begin(), ontology.slots.end());
  ontology.validate();

  const auto confusion_pool = shared_value_pairs(spec);
  std::vector<std::string> domain_names;
  for (const auto& [domain, _] : spec.domains) domain_names.push_back(domain);

  for (int k = 0; k < n_dialogues; ++k) {
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<uint64_t>(k) + 1)));
    const int T = pick(rng, 3, 8);

    // planned per-turn updates: slot -> value, applied before random ones
    std::vector<std::map<std::string, std::string>> planned(T + 1);
    std::set<std::string> reserved_slots;
    const bool confusion = !confusion_pool.empty() && pick(rng, 0, 1) == 1;
    if (confusion) {
      const ConfusionPlan& plan = pick_from(rng, confusion_pool);
      const std::string& value = pick_from(rng, plan.shared_values);
      const int i1 = pick(rng, 1, T - 1);
      const int i2 = pick(rng, i1 + 1, T);
      planned[i1][plan.domain_a + "-" + plan.slot_word] = value;
      planned[i2][plan.domain_b + "-" + plan.slot_word] = value;
      reserved_slots.insert(plan.domain_a + "-" + plan.slot_word);
      reserved_slots.insert(plan.domain_b + "-" + plan.slot_word);
      ++out.confusion_dialogues;
    }

    Dialogue dialogue;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%04d", k);
    dialogue.id = id;

    std::map<std::string, std::string> current;
    for (int t = 1; t <= T; ++t) {
      std::map<std::string, std::string> updates = planned[t];
      auto try_add_update = [&]() -> bool {
        const std::string& domain = pick_from(rng, domain_names);
        const auto& slot_words = spec.domains.at(domain);
        auto it = slot_words.begin();
        std::advance(it, pick(rng, 0, static_cast<int>(slot_words.size()) - 1));
        const std::string slot = domain + "-" + it->first;
        if (reserved_slots.count(slot) || updates.count(slot)) return false;
        const auto& values = it->second;
        std::string value = pick_from(rng, values);
        const auto cur = current.find(slot);
        if (cur != current.end() && cur->second == value) {
          // updates must change the value; step to the next candidate
          const auto at = std::find(values.begin(), values.end(), value);
          value = values[(at - values.begin() + 1) % values.size()];
        }
        updates[slot] = value;
        return true;
      };
      const int extra = pick(rng, 0, 3);
      for (int u = 0; u < extra; ++u) try_add_update();  // collisions just thin out
      for (int guard = 0; t == 1 && updates.empty() && guard < 100; ++guard)
        try_add_update();  // the opening turn always introduces something

      Turn turn;
      turn.index = t;
      if (updates.empty()) {
        turn.user = pick_from(rng, kIdleUser);
        turn.system = pick_from(rng, kIdleSystem);
      } else {
        std::string text;
        for (const auto& [slot, value] : updates) {
          const auto dash = slot.find('-');
          const std::string domain = slot.substr(0, dash);
          const std::string slot_word = slot.substr(dash + 1);
          if (!text.empty()) text += " and also ";
          text += expand(pick_from(rng, kUpdateTemplates), domain, slot_word, value);
          dialogue.domains.insert(domain);
        }
        turn.user = text;
        turn.system = pick_from(rng, kAckSystem);
      }

      for (const auto& [slot, value] : updates) current[slot] = value;
      turn.state = current;

      // every newly-set value must be literally mentioned in its turn
      const auto turn_tokens = tokenize_text(turn.user + " " + turn.system);
      for (const auto& [slot, value] : updates)
        for (const std::string& tok : tokenize_text(value))
          if (std::find(turn_tokens.begin(), turn_tokens.end(), tok) ==
              turn_tokens.end())
            throw ContractError("synthetic corpus: value token '" + tok +
                                "' missing from its turn text");

      dialogue.turns.push_back(std::move(turn));
    }
    out.corpus.dialogues.push_back(std::move(dialogue));
  }
  return out;
}

}  // namespace luna
