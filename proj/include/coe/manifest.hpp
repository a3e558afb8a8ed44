#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coe/json_util.hpp"

namespace coe {

// Highlighted area of a patch image, in pixels.
struct Region {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const Region&) const = default;
};

struct PatchRef {
  std::string patch_id;
  std::filesystem::path image_path;  // relative to the manifest root
  std::string source_image_id;
  std::optional<Region> region;  // absent: the whole patch is the crop
};

struct VisualConcept {
  std::string layer;
  std::size_t channel_index = 0;
  std::vector<PatchRef> patches;
};

struct LayerSpec {
  std::string name;
  int stage_order = 0;  // bottom-up position, 0 = shallowest
  std::size_t dimension = 0;
};

enum class XaiMethod { Relevance, Activation, MutualInformation };

std::string to_string(XaiMethod m);
XaiMethod xai_method_from_string(const std::string& s);

// Visual concepts for every channel of every key layer, plus the
// channel -> concept mapping. Loaded values are immutable.
class ConceptManifest {
 public:
  std::string model_id;
  std::string dataset_id;
  XaiMethod xai_method = XaiMethod::Relevance;
  std::size_t n_patches = 0;
  std::vector<LayerSpec> layers;  // sorted by stage_order
  std::vector<VisualConcept> concepts;
  std::filesystem::path root;

  const LayerSpec* find_layer(const std::string& name) const;
  const VisualConcept* find(const std::string& layer, std::size_t channel) const;

  // Rebuilds the (layer, channel) index; called by the loader after
  // validation.
  void reindex();

 private:
  std::map<std::pair<std::string, std::size_t>, std::size_t> index_;
};

// One input sample's per-layer relevance vectors, max-normalized upstream.
struct SampleRelevance {
  std::string sample_id;
  std::filesystem::path image_path;
  std::string label;
  std::string prediction;
  std::map<std::string, std::vector<double>> per_layer_values;
};

// Parses and fully validates a manifest document. Patch image paths are
// resolved against the document's directory.
ConceptManifest load_manifest(const std::filesystem::path& path);
ConceptManifest parse_manifest(const json& doc, const std::filesystem::path& root);

SampleRelevance load_relevance(const std::filesystem::path& path, const ConceptManifest& manifest);
SampleRelevance parse_relevance(const json& doc, const ConceptManifest& manifest);

// Checks a relevance sample against layer specs alone (used when only the
// database, not the manifest, is at hand).
void validate_relevance(const SampleRelevance& sample, const std::vector<LayerSpec>& layers);
SampleRelevance parse_relevance_unchecked(const json& doc);

json manifest_to_json(const ConceptManifest& m);
json relevance_to_json(const SampleRelevance& s);

// Canonical bytes: sorted keys, compact, floats at 9 significant digits.
std::string serialize_manifest(const ConceptManifest& m);
std::string serialize_relevance(const SampleRelevance& s);

}  // namespace coe
