#include "luna/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include <json.hpp>

namespace luna {

using nlohmann::json;

void Config::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError("config: " + why); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (peak_lr_encoder <= 0) fail("peak_lr_encoder must be positive");
  if (peak_lr_rest <= 0) fail("peak_lr_rest must be positive");
  if (warmup_proportion < 0 || warmup_proportion >= 1)
    fail("warmup_proportion must lie in [0, 1)");
  if (dev_fraction < 0 || dev_fraction >= 1)
    fail("dev_fraction must lie in [0, 1)");
  if (early_stop_patience < 1) fail("early_stop_patience must be >= 1");
  if (dropout != 0.0) fail("dropout is not supported; it must be 0");
  if (d < 1) fail("d must be positive");
  if (heads < 1) fail("heads must be positive");
  if (d % heads != 0) fail("d must be divisible by heads");
  if (utt_layers < 0) fail("utt_layers must be >= 0");
  if (schema_layers < 0) fail("schema_layers must be >= 0");
  if (n_slot_sa < 0) fail("n_slot_sa must be >= 0");
  if (n_turn_sa < 0) fail("n_turn_sa must be >= 0");
  if (max_seq_len < 8) fail("max_seq_len must be >= 8");
  if (max_turns < 1) fail("max_turns must be >= 1");
  if (init_std <= 0) fail("init_std must be positive");
  if (w_order < 0 || w_align < 0 || w_value < 0)
    fail("loss weights must be nonnegative");
}

namespace {

// Field registry driving both load and save so the two cannot drift apart.
struct Field {
  std::function<void(Config&, const json&)> set;
  std::function<json(const Config&)> get;
};

template <typename T, typename M>
Field make_field(const char* name, M Config::* member) {
  return Field{
      [name, member](Config& c, const json& v) {
        try {
          c.*member = v.get<T>();
        } catch (const json::exception&) {
          throw ConfigError(std::string("config field '") + name +
                            "' has the wrong type");
        }
      },
      [member](const Config& c) { return json(static_cast<T>(c.*member)); }};
}

const std::map<std::string, Field>& field_registry() {
  static const std::map<std::string, Field> fields = {
      {"seed", make_field<uint64_t>("seed", &Config::seed)},
      {"epochs", make_field<int>("epochs", &Config::epochs)},
      {"batch_size", make_field<int>("batch_size", &Config::batch_size)},
      {"peak_lr_encoder",
       make_field<double>("peak_lr_encoder", &Config::peak_lr_encoder)},
      {"peak_lr_rest", make_field<double>("peak_lr_rest", &Config::peak_lr_rest)},
      {"warmup_proportion",
       make_field<double>("warmup_proportion", &Config::warmup_proportion)},
      {"dev_fraction", make_field<double>("dev_fraction", &Config::dev_fraction)},
      {"early_stop_patience",
       make_field<int>("early_stop_patience", &Config::early_stop_patience)},
      {"dropout", make_field<double>("dropout", &Config::dropout)},
      {"d", make_field<int>("d", &Config::d)},
      {"heads", make_field<int>("heads", &Config::heads)},
      {"utt_layers", make_field<int>("utt_layers", &Config::utt_layers)},
      {"schema_layers", make_field<int>("schema_layers", &Config::schema_layers)},
      {"n_slot_sa", make_field<int>("n_slot_sa", &Config::n_slot_sa)},
      {"n_turn_sa", make_field<int>("n_turn_sa", &Config::n_turn_sa)},
      {"max_seq_len", make_field<int>("max_seq_len", &Config::max_seq_len)},
      {"max_turns", make_field<int>("max_turns", &Config::max_turns)},
      {"init_std", make_field<double>("init_std", &Config::init_std)},
      {"w_order", make_field<double>("w_order", &Config::w_order)},
      {"w_align", make_field<double>("w_align", &Config::w_align)},
      {"w_value", make_field<double>("w_value", &Config::w_value)},
      {"no_alignment_module",
       make_field<bool>("no_alignment_module", &Config::no_alignment_module)},
      {"no_overall_slot_to_turn",
       make_field<bool>("no_overall_slot_to_turn",
                        &Config::no_overall_slot_to_turn)},
      {"no_ranking_task",
       make_field<bool>("no_ranking_task", &Config::no_ranking_task)},
      {"soft_alignment",
       make_field<bool>("soft_alignment", &Config::soft_alignment)},
      {"freeze_schema_encoders",
       make_field<bool>("freeze_schema_encoders", &Config::freeze_schema_encoders)},
      {"align_first_change",
       make_field<bool>("align_first_change", &Config::align_first_change)},
  };
  return fields;
}

}  // namespace

Config Config::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  Config c;
  const auto& fields = field_registry();
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end())
      throw ConfigError("config: unknown field '" + key + "'");
    it->second.set(c, value);
  }
  c.validate();
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string Config::to_json_text() const {
  json j;
  for (const auto& [key, field] : field_registry()) j[key] = field.get(*this);
  return j.dump(2);
}

Config Config::with_paper_hparams() const {
  Config c = *this;
  c.peak_lr_encoder = 3e-5;
  c.peak_lr_rest = 1e-4;
  return c;
}

}  // namespace luna
