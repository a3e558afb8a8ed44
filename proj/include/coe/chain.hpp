#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "coe/acd_database.hpp"
#include "coe/llm_gateway.hpp"
#include "coe/manifest.hpp"

namespace coe {

struct SelectedConcept {
  std::size_t index = 0;
  double value = 0.0;
};

struct Selection {
  std::vector<SelectedConcept> items;  // value descending, index ascending on ties
  bool fallback = false;               // top-1 because max(v) <= 0
};

// Keeps every j with v_j > alpha * max(v). When max(v) <= 0 the single
// largest element is returned and flagged as a fallback.
Selection select_top_concepts(std::span<const double> values, double alpha);

enum class CaptionSource { ProvidedFile, CaptionerBackend };

struct Caption {
  std::string text;
  CaptionSource source = CaptionSource::ProvidedFile;
};

// Sidecar document: {sample_id: caption}.
Caption caption_from_sidecar(const std::filesystem::path& path, const std::string& sample_id);
Caption caption_from_backend(Gateway& gateway, const ImagePart& image, const std::string& model_tag = "captioner");

enum class FilterMode { Llm, Mock };

FilterMode filter_mode_from_string(const std::string& s);

// Tokens used for caption overlap: lowercase alphanumeric runs.
std::vector<std::string> overlap_tokens(std::string_view text);

// Picks the representative that best fits the caption. Mock mode: most
// caption-token overlap, then higher probability, then lexicographic. Llm
// mode: the gateway must answer with a listed representative; one retry,
// then the mock rule.
Atom filter_atom(const AtomCatalog& catalog, std::span<const double> probabilities, const Caption& caption,
                 Gateway* gateway, FilterMode mode, const std::string& model_tag = "filter");
Atom filter_atom(const AtomCatalog& catalog, const Caption& caption, Gateway* gateway, FilterMode mode);

struct NodeConcept {
  std::size_t channel = 0;
  double relevance = 0.0;
  Atom atom;
  std::string catalog_ref;  // "layer/channel" in the database
};

struct CircuitNode {
  std::string layer;
  int stage_order = 0;
  std::vector<NodeConcept> selected;
  bool fallback = false;

  std::size_t k() const { return selected.size(); }
};

struct ExplanationChain {
  std::string sample_id;
  std::string image_path;  // relative to the document holding the chain
  std::string label;
  std::string prediction;
  Caption caption;
  double alpha = 0.0;
  std::vector<CircuitNode> nodes;  // bottom-up
  std::string narrative;
};

struct ChainOptions {
  double alpha = 0.001;
  FilterMode filter_mode = FilterMode::Mock;
  std::string filter_model_tag = "filter";
};

ExplanationChain build_chain(const SampleRelevance& sample, const AcdDatabase& db, const Caption& caption,
                             Gateway* filter_gateway, const ChainOptions& options);

struct SynthesisOptions {
  std::string model_tag = "synthesizer";
  double temperature = 0.2;
  int max_output = 1024;
};

// Structured circuit block placed in the synthesis prompt; relevance values
// are rounded to 4 decimals.
json chain_prompt_block(const ExplanationChain& chain);
ChatRequest render_synthesis_prompt(const ExplanationChain& chain, const SynthesisOptions& options);
ExplanationChain synthesize(ExplanationChain chain, Gateway& gateway, const SynthesisOptions& options = {});

json chain_to_json(const ExplanationChain& chain);
ExplanationChain chain_from_json(const json& j);

// Case- and separator-insensitive comparison used for label vs prediction.
bool same_class(std::string_view a, std::string_view b);

}  // namespace coe
