#include "coe/manifest.hpp"

#include <algorithm>
#include <set>

#include "coe/error.hpp"

namespace coe {

namespace fs = std::filesystem;

std::string to_string(XaiMethod m) {
  switch (m) {
    case XaiMethod::Relevance: return "relevance";
    case XaiMethod::Activation: return "activation";
    case XaiMethod::MutualInformation: return "mutual-information";
  }
  return "relevance";
}

XaiMethod xai_method_from_string(const std::string& s) {
  if (s == "relevance") return XaiMethod::Relevance;
  if (s == "activation") return XaiMethod::Activation;
  if (s == "mutual-information") return XaiMethod::MutualInformation;
  throw ManifestError("unknown xai_method '" + s + "'");
}

const LayerSpec* ConceptManifest::find_layer(const std::string& name) const {
  auto it = std::find_if(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.name == name; });
  return it == layers.end() ? nullptr : &*it;
}

const VisualConcept* ConceptManifest::find(const std::string& layer, std::size_t channel) const {
  auto it = index_.find({layer, channel});
  return it == index_.end() ? nullptr : &concepts[it->second];
}

void ConceptManifest::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < concepts.size(); ++i)
    index_.emplace(std::make_pair(concepts[i].layer, concepts[i].channel_index), i);
}

namespace {

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ManifestError(where + ": missing key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ManifestError(where + ": bad value for '" + key + "': " + e.what());
  }
}

std::string concept_name(const std::string& layer, std::size_t channel) {
  return layer + "/" + std::to_string(channel);
}

}  // namespace

ConceptManifest parse_manifest(const json& doc, const fs::path& root) {
  ConceptManifest m;
  m.root = root;
  m.model_id = field<std::string>(doc, "model_id", "manifest");
  m.dataset_id = field<std::string>(doc, "dataset_id", "manifest");
  m.xai_method = xai_method_from_string(field<std::string>(doc, "xai_method", "manifest"));
  auto n = field<long long>(doc, "n_patches", "manifest");
  if (n < 1) throw ManifestError("n_patches must be >= 1");
  m.n_patches = static_cast<std::size_t>(n);

  for (const auto& jl : field<json>(doc, "layers", "manifest")) {
    LayerSpec l;
    l.name = field<std::string>(jl, "name", "layer");
    l.stage_order = field<int>(jl, "stage_order", "layer " + l.name);
    auto dim = field<long long>(jl, "dimension", "layer " + l.name);
    if (dim < 1) throw ManifestError("layer " + l.name + ": dimension must be >= 1");
    l.dimension = static_cast<std::size_t>(dim);
    if (m.find_layer(l.name)) throw ManifestError("duplicate layer '" + l.name + "'");
    m.layers.push_back(std::move(l));
  }
  if (m.layers.empty()) throw ManifestError("manifest has no layers");
  std::sort(m.layers.begin(), m.layers.end(),
            [](const LayerSpec& a, const LayerSpec& b) { return a.stage_order < b.stage_order; });
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (m.layers[i].stage_order != static_cast<int>(i))
      throw ManifestError("stage_order values must be unique and contiguous from 0");
  }

  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& jc : field<json>(doc, "concepts", "manifest")) {
    VisualConcept c;
    c.layer = field<std::string>(jc, "layer", "concept");
    auto ch = field<long long>(jc, "channel_index", "concept in " + c.layer);
    if (ch < 0) throw ManifestError("negative channel_index in layer " + c.layer);
    c.channel_index = static_cast<std::size_t>(ch);
    const auto where = concept_name(c.layer, c.channel_index);
    const LayerSpec* spec = m.find_layer(c.layer);
    if (!spec) throw ManifestError(where + ": unknown layer");
    if (c.channel_index >= spec->dimension) throw ManifestError(where + ": channel_index out of range");
    if (!seen.emplace(c.layer, c.channel_index).second)
      throw ManifestError(where + ": duplicate (layer, channel)");

    for (const auto& jp : field<json>(jc, "patches", where)) {
      PatchRef p;
      p.patch_id = field<std::string>(jp, "patch_id", where);
      p.image_path = field<std::string>(jp, "image_path", where);
      p.source_image_id = field<std::string>(jp, "source_image_id", where);
      if (jp.contains("region") && !jp.at("region").is_null()) {
        const auto& r = jp.at("region");
        Region reg{field<int>(r, "x", where), field<int>(r, "y", where), field<int>(r, "w", where),
                   field<int>(r, "h", where)};
        if (reg.w <= 0 || reg.h <= 0) throw ManifestError(where + ": region must have positive size");
        p.region = reg;
      }
      if (p.image_path.is_absolute()) throw ManifestError(where + ": image_path must be relative");
      if (!fs::is_regular_file(root / p.image_path))
        throw ManifestError(where + ": missing patch file " + p.image_path.string());
      c.patches.push_back(std::move(p));
    }
    if (c.patches.size() != m.n_patches)
      throw ManifestError(where + ": patch count mismatch (" + std::to_string(c.patches.size()) +
                          " != " + std::to_string(m.n_patches) + ")");
    m.concepts.push_back(std::move(c));
  }

  // Every channel of every layer needs exactly one concept.
  for (const auto& l : m.layers) {
    for (std::size_t ch = 0; ch < l.dimension; ++ch) {
      if (!seen.count({l.name, ch})) throw ManifestError(concept_name(l.name, ch) + ": missing concept");
    }
  }
  m.reindex();
  return m;
}

ConceptManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_json_file(path), path.parent_path());
}

SampleRelevance parse_relevance_unchecked(const json& doc) {
  SampleRelevance s;
  s.sample_id = field<std::string>(doc, "sample_id", "relevance");
  s.image_path = field<std::string>(doc, "image_path", "relevance");
  s.label = field<std::string>(doc, "label", "relevance");
  s.prediction = field<std::string>(doc, "prediction", "relevance");
  const auto values = field<json>(doc, "per_layer_values", "relevance");
  if (!values.is_object()) throw ManifestError("relevance: per_layer_values must be an object");
  for (auto it = values.begin(); it != values.end(); ++it) {
    try {
      s.per_layer_values[it.key()] = it.value().get<std::vector<double>>();
    } catch (const json::exception&) {
      throw ManifestError("relevance: layer " + it.key() + " is not a numeric vector");
    }
  }
  return s;
}

void validate_relevance(const SampleRelevance& s, const std::vector<LayerSpec>& layers) {
  for (const auto& [name, values] : s.per_layer_values) {
    auto it = std::find_if(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.name == name; });
    if (it == layers.end()) throw ManifestError("relevance: unknown layer '" + name + "'");
    if (values.size() != it->dimension)
      throw ManifestError("relevance: layer " + name + " has " + std::to_string(values.size()) +
                          " values, expected " + std::to_string(it->dimension));
  }
  for (const auto& l : layers) {
    if (!s.per_layer_values.count(l.name)) throw ManifestError("relevance: no vector for layer '" + l.name + "'");
  }
}

SampleRelevance parse_relevance(const json& doc, const ConceptManifest& manifest) {
  auto s = parse_relevance_unchecked(doc);
  validate_relevance(s, manifest.layers);
  return s;
}

SampleRelevance load_relevance(const fs::path& path, const ConceptManifest& manifest) {
  return parse_relevance(read_json_file(path), manifest);
}

json manifest_to_json(const ConceptManifest& m) {
  json layers = json::array();
  for (const auto& l : m.layers)
    layers.push_back({{"name", l.name}, {"stage_order", l.stage_order}, {"dimension", l.dimension}});
  json concepts = json::array();
  for (const auto& c : m.concepts) {
    json patches = json::array();
    for (const auto& p : c.patches) {
      json jp = {{"patch_id", p.patch_id},
                 {"image_path", p.image_path.generic_string()},
                 {"source_image_id", p.source_image_id}};
      if (p.region) jp["region"] = {{"x", p.region->x}, {"y", p.region->y}, {"w", p.region->w}, {"h", p.region->h}};
      patches.push_back(std::move(jp));
    }
    concepts.push_back({{"layer", c.layer}, {"channel_index", c.channel_index}, {"patches", std::move(patches)}});
  }
  return {{"model_id", m.model_id}, {"dataset_id", m.dataset_id}, {"xai_method", to_string(m.xai_method)},
          {"n_patches", m.n_patches}, {"layers", std::move(layers)}, {"concepts", std::move(concepts)}};
}

json relevance_to_json(const SampleRelevance& s) {
  json values = json::object();
  for (const auto& [k, v] : s.per_layer_values) values[k] = v;
  return {{"sample_id", s.sample_id}, {"image_path", s.image_path.generic_string()}, {"label", s.label},
          {"prediction", s.prediction}, {"per_layer_values", std::move(values)}};
}

std::string serialize_manifest(const ConceptManifest& m) { return canonical_dump(manifest_to_json(m)); }
std::string serialize_relevance(const SampleRelevance& s) { return canonical_dump(relevance_to_json(s)); }

}  // namespace coe
