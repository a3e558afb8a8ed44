#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "coe/acd.hpp"
#include "coe/semantic_clustering.hpp"

namespace coe {

// Label used for synthetic padding entries, k counted from 1.
std::string pad_label(std::size_t k);

struct DistributionEntry {
  std::string label;  // atom text, or pad_label(k)
  std::size_t count = 0;
  double probability = 0.0;
  bool is_pad = false;
};

// Atom probabilities over the clustered catalog plus max(0, N - P*) unit
// padding entries. denominator = slot total + pad.
struct ConceptDistribution {
  std::vector<DistributionEntry> entries;
  std::size_t pad = 0;
  std::size_t denominator = 0;
  std::vector<std::string> warnings;

  std::size_t support() const { return entries.size(); }
};

enum class LogBase { Natural, Two };

// -sum(p log p) / log(K) for the distribution count_i / sum(counts), where K
// is the number of entries. K < 2 gives 0; all-equal counts give exactly 1.
double normalized_entropy(std::span<const std::size_t> counts, LogBase base = LogBase::Natural);

ConceptDistribution distribution(const AtomCatalog& catalog, std::size_t q, std::size_t n);

double cpe_padded(const ConceptDistribution& dist, LogBase base = LogBase::Natural);
// Over unclustered unique atoms, normalized by log(P).
double cpe_naive(const RawAtomTable& table, LogBase base = LogBase::Natural);
// Over clusters, normalized by log(P*), no padding.
double cpe_clustered(const AtomCatalog& catalog, LogBase base = LogBase::Natural);

struct CpeScore {
  double h_naive = 0.0;
  double h_clustered = 0.0;
  double h_padded = 0.0;
};

CpeScore score_concept(const RawAtomTable& table, const AtomCatalog& catalog, const ConceptDistribution& dist);

struct LayerCpe {
  std::string layer;
  std::size_t d_l = 0;
  double mean_h = 0.0;
  std::size_t skipped = 0;  // channels without a score
};

// Arithmetic mean of h_padded. `scores` holds the channels that were
// described successfully; d_l - scores.size() is reported as skipped.
LayerCpe layer_cpe(const std::string& layer, std::size_t d_l, std::span<const CpeScore> scores);

struct ModelCpe {
  std::size_t num_layers = 0;
  double mean_h = 0.0;
};

// Unweighted mean over layers, not over channels.
ModelCpe model_cpe(std::span<const LayerCpe> layers);

}  // namespace coe
