#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coe/acd.hpp"
#include "coe/cpe.hpp"
#include "coe/manifest.hpp"
#include "coe/semantic_clustering.hpp"

namespace coe {

enum class DescribeStatus { Ok, Failed };

// One channel of the global explanation database: the patches that define
// the concept, their atoms, the clustered catalog with probabilities, and
// the three CPE values.
struct AcdRecord {
  std::string layer;
  int stage_order = 0;
  std::size_t layer_dim = 0;
  std::size_t channel = 0;
  std::size_t n_patches = 0;
  std::size_t q = 0;
  std::vector<PatchRef> patches;
  DescribeStatus status = DescribeStatus::Ok;
  std::string error;  // set when status == Failed
  std::vector<std::string> warnings;

  // Meaningful only when status == Ok.
  RawAtomTable table;
  AtomCatalog catalog;
  ConceptDistribution dist;
  CpeScore cpe;

  bool ok() const { return status == DescribeStatus::Ok; }
  // Probability of cluster i in the padded distribution.
  double probability(std::size_t cluster_index) const { return dist.entries.at(cluster_index).probability; }
};

json record_to_json(const AcdRecord& r);
AcdRecord record_from_json(const json& j);

// Records ordered by (stage_order, channel), one per line.
class AcdDatabase {
 public:
  AcdDatabase() = default;
  explicit AcdDatabase(std::vector<AcdRecord> records);

  const std::vector<AcdRecord>& records() const { return records_; }
  const AcdRecord* find(const std::string& layer, std::size_t channel) const;
  // Layers in stage order, reconstructed from the records.
  std::vector<LayerSpec> layers() const;
  bool empty() const { return records_.empty(); }

  std::string serialize() const;
  static AcdDatabase parse(std::string_view text);
  static AcdDatabase load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<AcdRecord> records_;
  std::map<std::pair<std::string, std::size_t>, std::size_t> index_;
};

}  // namespace coe
