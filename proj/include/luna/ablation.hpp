#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "luna/config.hpp"
#include "luna/corpus.hpp"

namespace luna {

struct AblationCell {
  uint64_t seed = 0;
  double joint = 0.0;
  double slot = 0.0;
  double alignment = 0.0;  // pair level
};

struct AblationRow {
  std::string variant;
  std::vector<AblationCell> cells;

  double mean_joint() const;
  double sd_joint() const;
  double min_joint() const;
  double max_joint() const;
  double mean_alignment() const;
  double sd_alignment() const;
};

// Trains and evaluates the full model and its ablations (ranking task off,
// overall slot-to-turn fusion off, alignment module off, soft alignment) once
// per seed. Per-(variant, seed) results are cached as JSON under `cache_dir`
// when given, so an interrupted sweep resumes where it stopped.
std::vector<AblationRow> run_ablations(const Corpus& train_corpus,
                                       const Corpus& eval_corpus,
                                       const Config& base,
                                       const Ontology& ontology,
                                       const std::vector<uint64_t>& seeds,
                                       const std::string& cache_dir = "",
                                       std::ostream* progress = nullptr);

// variant,seeds,mean_joint,sd_joint,min_joint,max_joint,mean_alignment,sd_alignment
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace luna
