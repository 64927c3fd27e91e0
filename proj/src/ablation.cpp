#include "luna/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "luna/checkpoint.hpp"
#include "luna/errors.hpp"
#include "luna/evaluator.hpp"
#include "luna/trainer.hpp"

namespace luna {
namespace {

double mean_of(const std::vector<AblationCell>& cells, double AblationCell::*f) {
  if (cells.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cells) s += c.*f;
  return s / static_cast<double>(cells.size());
}

double sd_of(const std::vector<AblationCell>& cells, double AblationCell::*f) {
  if (cells.size() < 2) return 0.0;
  const double m = mean_of(cells, f);
  double s = 0.0;
  for (const auto& c : cells) s += (c.*f - m) * (c.*f - m);
  return std::sqrt(s / static_cast<double>(cells.size() - 1));
}

struct Variant {
  const char* name;
  void (*apply)(Config*);
};

constexpr Variant kVariants[] = {
    {"full", [](Config*) {}},
    {"no_ranking", [](Config* c) { c->no_ranking_task = true; }},
    {"no_overall_s2t", [](Config* c) { c->no_overall_slot_to_turn = true; }},
    {"no_alignment", [](Config* c) { c->no_alignment_module = true; }},
    {"soft", [](Config* c) { c->soft_alignment = true; }},
};

std::string cache_path(const std::string& dir, const std::string& variant,
                       uint64_t seed) {
  return dir + "/abl-" + variant + "-seed" + std::to_string(seed) + ".json";
}

bool load_cached(const std::string& path, AblationCell* cell) {
  std::ifstream in(path);
  if (!in) return false;
  try {
    nlohmann::json j;
    in >> j;
    cell->joint = j.at("joint").get<double>();
    cell->slot = j.at("slot").get<double>();
    cell->alignment = j.at("alignment").get<double>();
    return true;
  } catch (const nlohmann::json::exception&) {
    return false;  // unreadable cache entries are recomputed
  }
}

void store_cached(const std::string& path, const AblationCell& cell) {
  nlohmann::json j;
  j["seed"] = cell.seed;
  j["joint"] = cell.joint;
  j["slot"] = cell.slot;
  j["alignment"] = cell.alignment;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write ablation cache entry: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace

double AblationRow::mean_joint() const { return mean_of(cells, &AblationCell::joint); }
double AblationRow::sd_joint() const { return sd_of(cells, &AblationCell::joint); }
double AblationRow::min_joint() const {
  double m = cells.empty() ? 0.0 : cells[0].joint;
  for (const auto& c : cells) m = std::min(m, c.joint);
  return m;
}
double AblationRow::max_joint() const {
  double m = cells.empty() ? 0.0 : cells[0].joint;
  for (const auto& c : cells) m = std::max(m, c.joint);
  return m;
}
double AblationRow::mean_alignment() const {
  return mean_of(cells, &AblationCell::alignment);
}
double AblationRow::sd_alignment() const {
  return sd_of(cells, &AblationCell::alignment);
}

std::vector<AblationRow> run_ablations(const Corpus& train_corpus,
                                       const Corpus& eval_corpus,
                                       const Config& base,
                                       const Ontology& ontology,
                                       const std::vector<uint64_t>& seeds,
                                       const std::string& cache_dir,
                                       std::ostream* progress) {
  if (seeds.empty()) throw ContractError("run_ablations: need at least one seed");
  std::vector<AblationRow> rows;
  for (const Variant& variant : kVariants) {
    AblationRow row;
    row.variant = variant.name;
    for (const uint64_t seed : seeds) {
      AblationCell cell;
      cell.seed = seed;
      const std::string path =
          cache_dir.empty() ? "" : cache_path(cache_dir, variant.name, seed);
      if (!path.empty() && load_cached(path, &cell)) {
        if (progress)
          (*progress) << "ablate " << row.variant << " seed " << seed
                      << ": cached" << std::endl;
        row.cells.push_back(cell);
        continue;
      }
      Config cfg = base;
      variant.apply(&cfg);
      cfg.seed = seed;
      const TrainResult trained = train_model(train_corpus, cfg, ontology, {});
      const auto loaded = restore_model(trained.best);
      const EvalRun run = evaluate_model(*loaded->model, eval_corpus);
      cell.joint = run.report.joint_accuracy;
      cell.slot = run.report.slot_accuracy;
      cell.alignment = run.report.alignment_accuracy;
      if (!path.empty()) store_cached(path, cell);
      if (progress)
        (*progress) << "ablate " << row.variant << " seed " << seed
                    << ": joint " << cell.joint << " align " << cell.alignment
                    << std::endl;
      row.cells.push_back(cell);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      "variant,seeds,mean_joint,sd_joint,min_joint,max_joint,mean_alignment,sd_alignment\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  r.variant.c_str(), r.cells.size(), r.mean_joint(), r.sd_joint(),
                  r.min_joint(), r.max_joint(), r.mean_alignment(),
                  r.sd_alignment());
    out += line;
  }
  return out;
}

}  // namespace luna
