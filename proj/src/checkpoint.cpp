#include "luna/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "luna/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as little-endian float64");

namespace luna {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'L', 'U', 'N', 'A', 'C', 'K', 'P', 'T'};
constexpr const char* kOptM = "opt.m:";
constexpr const char* kOptV = "opt.v:";

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void append_mat(const Mat& m, std::string* payload) {
  const auto* bytes = reinterpret_cast<const char*>(m.data());
  payload->append(bytes, static_cast<std::size_t>(m.size()) * sizeof(double));
}

json array_entry(const std::string& name, const Mat& m, bool frozen,
                 uint64_t offset) {
  json e;
  e["name"] = name;
  e["rows"] = static_cast<int64_t>(m.rows());
  e["cols"] = static_cast<int64_t>(m.cols());
  e["offset"] = offset;
  e["fnv1a"] = hex64(fnv1a64(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double)));
  e["frozen"] = frozen;
  return e;
}

template <typename T>
T read_le(const std::string& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

Checkpoint snapshot_checkpoint(const ParamStore& store, const Adam* opt,
                               const Config& cfg, const Vocab& vocab,
                               const Ontology& ontology) {
  Checkpoint ck;
  ck.config = cfg;
  ck.vocab_tokens = vocab.id_to_token;
  ck.ontology = ontology;
  for (const Parameter* p : store.all()) {
    ck.arrays[p->name()] = p->value();
    ck.frozen[p->name()] = p->frozen();
  }
  if (opt != nullptr) {
    ck.adam = opt->state();
    ck.adam_steps = opt->steps_taken();
    ck.total_steps = opt->total_steps();
  }
  return ck;
}

void restore_parameters(const Checkpoint& ck, ParamStore& store) {
  for (const auto& [name, mat] : ck.arrays)
    if (!store.contains(name))
      throw DataError("checkpoint array '" + name +
                      "' has no matching model parameter");
  for (Parameter* p : store.all()) {
    const auto it = ck.arrays.find(p->name());
    if (it == ck.arrays.end())
      throw DataError("checkpoint is missing parameter '" + p->name() + "'");
    const Mat& src = it->second;
    if (src.rows() != p->value().rows() || src.cols() != p->value().cols())
      throw ShapeError("checkpoint parameter '" + p->name() + "' is " +
                       std::to_string(src.rows()) + "x" + std::to_string(src.cols()) +
                       ", model expects " + std::to_string(p->value().rows()) + "x" +
                       std::to_string(p->value().cols()));
    p->mutable_value() = src;
    const auto fr = ck.frozen.find(p->name());
    if (fr != ck.frozen.end()) p->set_frozen(fr->second);
  }
  store.bump_version();  // derived caches must not survive a restore
}

void restore_optimizer(const Checkpoint& ck, Adam& opt) {
  opt.restore(ck.adam, ck.adam_steps);
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  json manifest;
  manifest["config"] = json::parse(ck.config.to_json_text());
  manifest["vocab"] = ck.vocab_tokens;
  json ont;
  ont["slots"] = ck.ontology.slots;
  ont["values"] = ck.ontology.values;
  manifest["ontology"] = ont;
  manifest["adam_steps"] = ck.adam_steps;
  manifest["global_step"] = ck.global_step;
  manifest["total_steps"] = ck.total_steps;
  manifest["epochs_done"] = ck.epochs_done;
  manifest["best_dev_joint"] = ck.best_dev_joint;

  std::string payload;
  json arrays = json::array();
  for (const auto& [name, mat] : ck.arrays) {
    const auto fr = ck.frozen.find(name);
    arrays.push_back(array_entry(name, mat, fr != ck.frozen.end() && fr->second,
                                 static_cast<uint64_t>(payload.size())));
    append_mat(mat, &payload);
  }
  for (const auto& [name, slot] : ck.adam) {
    arrays.push_back(array_entry(kOptM + name, slot.m, false,
                                 static_cast<uint64_t>(payload.size())));
    append_mat(slot.m, &payload);
    arrays.push_back(array_entry(kOptV + name, slot.v, false,
                                 static_cast<uint64_t>(payload.size())));
    append_mat(slot.v, &payload);
  }
  manifest["arrays"] = std::move(arrays);

  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint32_t version = kCheckpointFormatVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint64_t manifest_len = text.size();
  out.write(reinterpret_cast<const char*>(&manifest_len), sizeof(manifest_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed while writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());

  constexpr std::size_t header = sizeof(kMagic) + sizeof(uint32_t) + sizeof(uint64_t);
  if (bytes.size() < header) throw DataError("checkpoint file truncated: " + path);
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  const auto version = read_le<uint32_t>(bytes, sizeof(kMagic));
  if (version != kCheckpointFormatVersion)
    throw DataError("unsupported checkpoint format version " +
                    std::to_string(version) + "; this build reads version " +
                    std::to_string(kCheckpointFormatVersion));
  const auto manifest_len =
      read_le<uint64_t>(bytes, sizeof(kMagic) + sizeof(uint32_t));
  if (header + manifest_len > bytes.size())
    throw DataError("checkpoint file truncated: " + path);

  json manifest;
  try {
    manifest = json::parse(bytes.substr(header, manifest_len));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.config = Config::from_json_text(manifest.at("config").dump());
    ck.vocab_tokens = manifest.at("vocab").get<std::vector<std::string>>();
    ck.ontology.slots = manifest.at("ontology").at("slots").get<std::vector<std::string>>();
    ck.ontology.values = manifest.at("ontology")
                             .at("values")
                             .get<std::map<std::string, std::vector<std::string>>>();
    ck.adam_steps = manifest.at("adam_steps").get<int64_t>();
    ck.global_step = manifest.at("global_step").get<int64_t>();
    ck.total_steps = manifest.at("total_steps").get<int64_t>();
    ck.epochs_done = manifest.at("epochs_done").get<int>();
    ck.best_dev_joint = manifest.at("best_dev_joint").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest is malformed: ") + e.what());
  }
  ck.ontology.validate();

  const std::size_t payload_base = header + manifest_len;
  const std::size_t payload_size = bytes.size() - payload_base;
  if (!manifest.contains("arrays") || !manifest["arrays"].is_array())
    throw DataError("checkpoint manifest is malformed: missing array table");
  for (const auto& e : manifest["arrays"]) {
    std::string name;
    int64_t rows = 0, cols = 0;
    uint64_t offset = 0;
    std::string sum;
    bool frozen = false;
    try {
      name = e.at("name").get<std::string>();
      rows = e.at("rows").get<int64_t>();
      cols = e.at("cols").get<int64_t>();
      offset = e.at("offset").get<uint64_t>();
      sum = e.at("fnv1a").get<std::string>();
      frozen = e.at("frozen").get<bool>();
    } catch (const json::exception& ex) {
      throw DataError(std::string("checkpoint manifest is malformed: ") + ex.what());
    }
    if (rows < 0 || cols < 0)
      throw DataError("checkpoint array '" + name + "' has a negative shape");
    const uint64_t nbytes = static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols) * sizeof(double);
    if (offset > payload_size || nbytes > payload_size - offset)
      throw DataError("checkpoint file truncated: array '" + name +
                      "' extends past the end of " + path);
    const char* src = bytes.data() + payload_base + offset;
    if (hex64(fnv1a64(src, static_cast<std::size_t>(nbytes))) != sum)
      throw DataError("checkpoint integrity failure: checksum mismatch for array '" +
                      name + "'");
    Mat m(rows, cols);
    std::memcpy(m.data(), src, static_cast<std::size_t>(nbytes));
    if (name.rfind(kOptM, 0) == 0) {
      ck.adam[name.substr(std::strlen(kOptM))].m = std::move(m);
    } else if (name.rfind(kOptV, 0) == 0) {
      ck.adam[name.substr(std::strlen(kOptV))].v = std::move(m);
    } else {
      ck.arrays[name] = std::move(m);
      ck.frozen[name] = frozen;
    }
  }
  return ck;
}

std::unique_ptr<LoadedModel> restore_model(const Checkpoint& ck) {
  auto lm = std::make_unique<LoadedModel>();
  lm->config = ck.config;
  lm->vocab = Vocab::from_tokens(ck.vocab_tokens);
  lm->ontology = ck.ontology;
  lm->store = std::make_unique<ParamStore>(lm->config.seed);
  lm->model = std::make_unique<LunaModel>(*lm->store, lm->config, lm->vocab,
                                          lm->ontology);
  restore_parameters(ck, *lm->store);
  return lm;
}

}  // namespace luna
