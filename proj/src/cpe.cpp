#include "coe/cpe.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "coe/error.hpp"

namespace coe {

std::string pad_label(std::size_t k) { return "⟨pad-" + std::to_string(k) + "⟩"; }

double normalized_entropy(std::span<const std::size_t> counts, LogBase base) {
  if (counts.size() < 2) return 0.0;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw Error("entropy of an all-zero distribution");
  if (std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c == counts.front(); })) return 1.0;

  auto lg = [base](double x) { return base == LogBase::Natural ? std::log(x) : std::log2(x); };
  const double denom = static_cast<double>(total);
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / denom;
    h -= p * lg(p);
  }
  h /= lg(static_cast<double>(counts.size()));
  return std::clamp(h, 0.0, 1.0);
}

ConceptDistribution distribution(const AtomCatalog& catalog, std::size_t q, std::size_t n) {
  if (catalog.clusters.empty()) throw Error("distribution of an empty catalog");
  ConceptDistribution d;
  std::size_t total = 0;
  for (const auto& c : catalog.clusters) total += c.count;
  if (total != q * n) {
    d.warnings.push_back("slot total " + std::to_string(total) + " differs from Q*N = " + std::to_string(q * n));
    spdlog::warn("distribution: {}", d.warnings.back());
  }
  d.pad = n > catalog.p_star() ? n - catalog.p_star() : 0;
  d.denominator = total + d.pad;
  const double denom = static_cast<double>(d.denominator);
  for (const auto& c : catalog.clusters)
    d.entries.push_back({c.representative.text(), c.count, static_cast<double>(c.count) / denom, false});
  for (std::size_t k = 1; k <= d.pad; ++k) d.entries.push_back({pad_label(k), 1, 1.0 / denom, true});
  return d;
}

double cpe_padded(const ConceptDistribution& dist, LogBase base) {
  std::vector<std::size_t> counts;
  counts.reserve(dist.entries.size());
  for (const auto& e : dist.entries) counts.push_back(e.count);
  return normalized_entropy(counts, base);
}

double cpe_naive(const RawAtomTable& table, LogBase base) { return normalized_entropy(table.counts, base); }

double cpe_clustered(const AtomCatalog& catalog, LogBase base) {
  std::vector<std::size_t> counts;
  counts.reserve(catalog.clusters.size());
  for (const auto& c : catalog.clusters) counts.push_back(c.count);
  return normalized_entropy(counts, base);
}

CpeScore score_concept(const RawAtomTable& table, const AtomCatalog& catalog, const ConceptDistribution& dist) {
  return {cpe_naive(table), cpe_clustered(catalog), cpe_padded(dist)};
}

LayerCpe layer_cpe(const std::string& layer, std::size_t d_l, std::span<const CpeScore> scores) {
  if (scores.empty()) throw Error("layer " + layer + " has no scored channels");
  double sum = 0.0;
  for (const auto& s : scores) sum += s.h_padded;
  LayerCpe out{layer, d_l, sum / static_cast<double>(scores.size()), 0};
  out.skipped = d_l > scores.size() ? d_l - scores.size() : 0;
  if (out.skipped) spdlog::warn("layer {}: {} channel(s) skipped in mean", layer, out.skipped);
  return out;
}

ModelCpe model_cpe(std::span<const LayerCpe> layers) {
  if (layers.empty()) throw Error("model CPE needs at least one layer");
  double sum = 0.0;
  for (const auto& l : layers) sum += l.mean_h;
  return {layers.size(), sum / static_cast<double>(layers.size())};
}

}  // namespace coe
