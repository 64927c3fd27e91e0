#include "luna/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace luna {

using nlohmann::json;

int Ontology::slot_index(const std::string& name) const {
  auto it = std::lower_bound(slots.begin(), slots.end(), name);
  if (it == slots.end() || *it != name)
    throw DataError("ontology: unknown slot '" + name + "'");
  return static_cast<int>(it - slots.begin());
}

const std::vector<std::string>& Ontology::candidates(const std::string& slot) const {
  auto it = values.find(slot);
  if (it == values.end())
    throw DataError("ontology: unknown slot '" + slot + "'");
  return it->second;
}

void Ontology::validate() const {
  if (slots.empty()) throw DataError("ontology: no slots");
  if (!std::is_sorted(slots.begin(), slots.end()))
    throw DataError("ontology: slots must be sorted");
  if (std::adjacent_find(slots.begin(), slots.end()) != slots.end())
    throw DataError("ontology: duplicate slot name");
  for (const std::string& slot : slots) {
    const auto& cands = candidates(slot);
    if (std::find(cands.begin(), cands.end(), "none") == cands.end())
      throw DataError("ontology: slot '" + slot + "' is missing the 'none' value");
  }
}

std::vector<TurnLabels> derive_alignment_labels(const Dialogue& dialogue,
                                                const Ontology& ontology,
                                                bool align_first_change) {
  const int J = ontology.slot_count();
  std::vector<TurnLabels> out;
  out.reserve(dialogue.turns.size());

  std::vector<std::string> prev(J, "none");
  std::vector<int> change_turn(J, kBlankTarget);  // turn of the tracked change
  for (const Turn& turn : dialogue.turns) {
    for (int j = 0; j < J; ++j) {
      auto it = turn.state.find(ontology.slots[j]);
      const std::string value = it == turn.state.end() ? "none" : it->second;
      if (value != prev[j]) {
        const bool first_ever = change_turn[j] == kBlankTarget;
        if (!align_first_change || first_ever) change_turn[j] = turn.index;
        prev[j] = value;
      }
    }
    TurnLabels labels;
    labels.turn = turn.index;
    labels.target.resize(J);
    for (int j = 0; j < J; ++j)
      labels.target[j] = prev[j] == "none" ? kBlankTarget : change_turn[j];
    out.push_back(std::move(labels));
  }
  return out;
}

std::vector<int> order_slots(const TurnLabels& labels, const Ontology& ontology) {
  const int J = ontology.slot_count();
  if (static_cast<int>(labels.target.size()) != J)
    throw ContractError("order_slots: label count " +
                        std::to_string(labels.target.size()) +
                        " does not match ontology slot count " + std::to_string(J));
  for (int target : labels.target)
    if (target < kBlankTarget || target > labels.turn)
      throw ContractError("order_slots: target turn " + std::to_string(target) +
                          " outside 0.." + std::to_string(labels.turn));

  std::vector<int> perm(J);
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](int a, int b) {
    const bool blank_a = labels.target[a] == kBlankTarget;
    const bool blank_b = labels.target[b] == kBlankTarget;
    if (blank_a != blank_b) return blank_b;  // mentioned slots first
    if (!blank_a && labels.target[a] != labels.target[b])
      return labels.target[a] < labels.target[b];
    return ontology.slots[a] < ontology.slots[b];
  });
  return perm;
}

std::vector<std::string> tokenize_text(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (unsigned char ch : text) {
    const char c = static_cast<char>(std::tolower(ch));
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word += c;
    } else {
      flush();
      if (!std::isspace(static_cast<unsigned char>(c))) out.push_back({c});
    }
  }
  flush();
  return out;
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

Vocab Vocab::from_tokens(std::vector<std::string> id_to_token) {
  static const std::vector<std::string> reserved = {"[PAD]", "[UNK]", "[CLS]",
                                                    "[SEP]", "[BLANK]"};
  if (id_to_token.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), id_to_token.begin()))
    throw DataError("vocab: reserved token block missing or reordered");
  Vocab v;
  v.id_to_token = std::move(id_to_token);
  for (size_t i = 0; i < v.id_to_token.size(); ++i) {
    if (!v.token_to_id.emplace(v.id_to_token[i], static_cast<int>(i)).second)
      throw DataError("vocab: duplicate token '" + v.id_to_token[i] + "'");
  }
  return v;
}

Vocab Vocab::build(const Corpus& corpus, const Ontology& ontology) {
  std::set<std::string> seen;
  auto absorb = [&](const std::string& text) {
    for (std::string& tok : tokenize_text(text)) seen.insert(std::move(tok));
  };
  for (const Dialogue& d : corpus.dialogues)
    for (const Turn& t : d.turns) {
      absorb(t.user);
      absorb(t.system);
    }
  for (const std::string& slot : ontology.slots) {
    absorb(slot);
    for (const std::string& value : ontology.candidates(slot)) absorb(value);
  }

  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BLANK]"};
  tokens.insert(tokens.end(), seen.begin(), seen.end());
  return from_tokens(std::move(tokens));
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const std::string& tok : tokenize_text(text)) ids.push_back(vocab.id(tok));
  return ids;
}

InputSequence build_input_sequence(const Dialogue& dialogue, int t,
                                   const Vocab& vocab, int max_len) {
  if (t < 1 || t > static_cast<int>(dialogue.turns.size()))
    throw ContractError("build_input_sequence: turn " + std::to_string(t) +
                        " outside dialogue '" + dialogue.id + "' with " +
                        std::to_string(dialogue.turns.size()) + " turns");

  std::vector<std::vector<int>> user_tok(t + 1), system_tok(t + 1);
  std::vector<int> turn_len(t + 1, 0);
  for (int i = 1; i <= t; ++i) {
    user_tok[i] = tokenize(dialogue.turns[i - 1].user, vocab);
    system_tok[i] = tokenize(dialogue.turns[i - 1].system, vocab);
    turn_len[i] = static_cast<int>(user_tok[i].size() + system_tok[i].size());
    if (turn_len[i] == 0)
      throw DataError("dialogue '" + dialogue.id + "' turn " + std::to_string(i) +
                      " has no tokens");
  }

  int total = 3;  // [CLS] [SEP] [BLANK]
  for (int i = 1; i <= t; ++i) total += turn_len[i];
  int first = 1;
  while (total > max_len && first < t) {
    total -= turn_len[first];
    ++first;
  }
  if (total > max_len)
    throw DataError("dialogue '" + dialogue.id + "' turn " + std::to_string(t) +
                    " alone exceeds max sequence length " +
                    std::to_string(max_len));

  InputSequence seq;
  seq.t = t;
  seq.first_turn = first;
  seq.tokens.reserve(total);
  seq.turn_ids.reserve(total);
  seq.segment_ids.reserve(total);

  auto push = [&](int token, int turn, int segment) {
    seq.tokens.push_back(token);
    seq.turn_ids.push_back(turn);
    seq.segment_ids.push_back(segment);
  };

  push(Vocab::kCls, 0, 0);
  for (int i = first; i <= t; ++i) {
    const Index start = static_cast<Index>(seq.tokens.size());
    for (int id : user_tok[i]) push(id, i, 1);
    for (int id : system_tok[i]) push(id, i, 2);
    seq.spans.emplace_back(start, static_cast<Index>(turn_len[i]));
  }
  push(Vocab::kSep, t, 0);
  seq.spans.emplace_back(static_cast<Index>(seq.tokens.size()), 1);
  push(Vocab::kBlank, t + 1, 0);
  return seq;
}

// ---- serialization -------------------------------------------------------

namespace {

json parse_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw IoError(std::string(what) + ": cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string(what) + ": invalid JSON in '" + path +
                    "': " + e.what());
  }
}

void write_file(const std::string& path, const std::string& text,
                const char* what) {
  std::ofstream out(path);
  if (!out) throw IoError(std::string(what) + ": cannot write '" + path + "'");
  out << text << '\n';
}

}  // namespace

Ontology load_ontology(const std::string& path) {
  const json j = parse_file(path, "ontology");
  if (!j.is_object()) throw DataError("ontology: top level must be an object");
  Ontology ont;
  for (const auto& [slot, cands] : j.items()) {
    if (!cands.is_array())
      throw DataError("ontology: slot '" + slot + "' must map to a value list");
    std::vector<std::string> list;
    for (const auto& v : cands) {
      if (!v.is_string())
        throw DataError("ontology: slot '" + slot + "' has a non-string value");
      list.push_back(v.get<std::string>());
    }
    ont.slots.push_back(slot);
    ont.values[slot] = std::move(list);
  }
  std::sort(ont.slots.begin(), ont.slots.end());
  ont.validate();
  return ont;
}

Corpus load_corpus(const std::string& path, const Ontology& ontology) {
  const json j = parse_file(path, "corpus");
  if (!j.is_object() || !j.contains("dialogues") || !j["dialogues"].is_array())
    throw DataError("corpus: expected top-level object with a 'dialogues' array");

  Corpus corpus;
  for (const auto& dj : j["dialogues"]) {
    Dialogue d;
    if (!dj.contains("id") || !dj["id"].is_string())
      throw DataError("corpus: dialogue without string 'id'");
    d.id = dj["id"].get<std::string>();
    if (!dj.contains("turns") || !dj["turns"].is_array())
      throw DataError("corpus: dialogue '" + d.id + "' has no 'turns' array");

    int index = 0;
    for (const auto& tj : dj["turns"]) {
      Turn turn;
      turn.index = ++index;
      for (const char* key : {"user", "system"})
        if (!tj.contains(key) || !tj[key].is_string())
          throw DataError("corpus: dialogue '" + d.id + "' turn " +
                          std::to_string(index) + " missing string '" + key + "'");
      turn.user = tj["user"].get<std::string>();
      turn.system = tj["system"].get<std::string>();
      if (tj.contains("state")) {
        if (!tj["state"].is_object())
          throw DataError("corpus: dialogue '" + d.id + "' turn " +
                          std::to_string(index) + " 'state' must be an object");
        for (const auto& [slot, value] : tj["state"].items()) {
          if (!value.is_string())
            throw DataError("corpus: dialogue '" + d.id + "' slot '" + slot +
                            "' has a non-string value");
          const std::string v = value.get<std::string>();
          if (std::find(ontology.slots.begin(), ontology.slots.end(), slot) ==
              ontology.slots.end())
            throw DataError("corpus: dialogue '" + d.id + "' uses unknown slot '" +
                            slot + "'");
          const auto& cands = ontology.candidates(slot);
          if (v != "none" && v != "dontcare" &&
              std::find(cands.begin(), cands.end(), v) == cands.end())
            throw DataError("corpus: dialogue '" + d.id + "' slot '" + slot +
                            "' has value '" + v + "' not in the ontology");
          turn.state[slot] = v;
          const auto dash = slot.find('-');
          if (dash != std::string::npos) d.domains.insert(slot.substr(0, dash));
        }
      }
      d.turns.push_back(std::move(turn));
    }
    corpus.dialogues.push_back(std::move(d));
  }
  return corpus;
}

void save_ontology(const Ontology& ontology, const std::string& path) {
  json j = json::object();
  for (const std::string& slot : ontology.slots)
    j[slot] = ontology.candidates(slot);
  write_file(path, j.dump(2), "ontology");
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  json dialogues = json::array();
  for (const Dialogue& d : corpus.dialogues) {
    json turns = json::array();
    for (const Turn& t : d.turns) {
      json state = json::object();
      for (const auto& [slot, value] : t.state) state[slot] = value;
      turns.push_back(
          {{"user", t.user}, {"system", t.system}, {"state", std::move(state)}});
    }
    dialogues.push_back({{"id", d.id}, {"turns", std::move(turns)}});
  }
  write_file(path, json{{"dialogues", std::move(dialogues)}}.dump(2), "corpus");
}

}  // namespace luna
