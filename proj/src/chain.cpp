#include "coe/chain.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <set>

#include <spdlog/spdlog.h>

#include "coe/error.hpp"
#include "coe/prompts.hpp"

namespace coe {

Selection select_top_concepts(std::span<const double> values, double alpha) {
  if (values.empty()) throw Error("select_top_concepts: empty relevance vector");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");

  auto by_value = [&](std::size_t a, std::size_t b) {
    return values[a] != values[b] ? values[a] > values[b] : a < b;
  };
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j)
    if (by_value(j, best)) best = j;
  const double vmax = values[best];

  Selection sel;
  if (!(vmax > 0.0)) {
    sel.items.push_back({best, vmax});
    sel.fallback = true;
    return sel;
  }
  const double threshold = alpha * vmax;
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < values.size(); ++j)
    if (values[j] > threshold) keep.push_back(j);
  std::sort(keep.begin(), keep.end(), by_value);
  for (auto j : keep) sel.items.push_back({j, values[j]});
  return sel;
}

Caption caption_from_sidecar(const std::filesystem::path& path, const std::string& sample_id) {
  auto doc = read_json_file(path);
  if (!doc.is_object() || !doc.contains(sample_id) || !doc[sample_id].is_string())
    throw Error("no caption for sample '" + sample_id + "' in " + path.string());
  auto text = doc[sample_id].get<std::string>();
  if (text.empty()) throw Error("empty caption for sample '" + sample_id + "'");
  return {std::move(text), CaptionSource::ProvidedFile};
}

Caption caption_from_backend(Gateway& gateway, const ImagePart& image, const std::string& model_tag) {
  auto resp = gateway.complete(make_request(model_tag, 0.0, std::string(prompts::caption()), {image}));
  return {resp.text, CaptionSource::CaptionerBackend};
}

FilterMode filter_mode_from_string(const std::string& s) {
  if (s == "llm") return FilterMode::Llm;
  if (s == "mock") return FilterMode::Mock;
  throw Error("unknown filter mode '" + s + "'");
}

std::vector<std::string> overlap_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

std::size_t mock_pick(const AtomCatalog& catalog, std::span<const double> probabilities, const Caption& caption) {
  const auto words = overlap_tokens(caption.text);
  const std::set<std::string> caption_tokens(words.begin(), words.end());
  auto overlap = [&](std::size_t i) {
    const auto toks = overlap_tokens(catalog.clusters[i].representative.text());
    std::set<std::string> distinct(toks.begin(), toks.end());
    return static_cast<std::size_t>(
        std::count_if(distinct.begin(), distinct.end(), [&](const std::string& t) { return caption_tokens.count(t) > 0; }));
  };
  std::size_t best = 0;
  std::size_t best_overlap = overlap(0);
  for (std::size_t i = 1; i < catalog.clusters.size(); ++i) {
    const auto ov = overlap(i);
    const auto& a = catalog.clusters[i].representative.text();
    const auto& b = catalog.clusters[best].representative.text();
    bool better = ov != best_overlap                          ? ov > best_overlap
                  : probabilities[i] != probabilities[best] ? probabilities[i] > probabilities[best]
                                                              : a < b;
    if (better) {
      best = i;
      best_overlap = ov;
    }
  }
  return best;
}

std::optional<std::size_t> match_listed(const AtomCatalog& catalog, const std::string& answer) {
  std::string cleaned = answer;
  if (auto nl = cleaned.find('\n'); nl != std::string::npos) cleaned.erase(nl);
  try {
    auto a = normalize_atom(cleaned);
    for (std::size_t i = 0; i < catalog.clusters.size(); ++i)
      if (catalog.clusters[i].representative == a) return i;
  } catch (const ParseError&) {
  }
  return std::nullopt;
}

}  // namespace

Atom filter_atom(const AtomCatalog& catalog, std::span<const double> probabilities, const Caption& caption,
                 Gateway* gateway, FilterMode mode, const std::string& model_tag) {
  if (catalog.clusters.empty()) throw Error("filter_atom: empty catalog");
  if (probabilities.size() < catalog.clusters.size()) throw Error("filter_atom: missing probabilities");
  if (catalog.clusters.size() == 1) return catalog.clusters.front().representative;

  if (mode == FilterMode::Llm) {
    if (!gateway) throw Error("filter_atom: llm mode needs a gateway");
    std::string listing;
    for (std::size_t i = 0; i < catalog.clusters.size(); ++i) {
      char prob[32];
      std::snprintf(prob, sizeof prob, "%.4f", probabilities[i]);
      listing += "- " + catalog.clusters[i].representative.text() + " (" + prob + ")\n";
    }
    auto text = prompts::render(prompts::filter(), {{"atoms", listing}, {"caption", caption.text}});
    auto request = make_request(model_tag, 0.0, text);
    auto answer = gateway->complete(request).text;
    if (auto hit = match_listed(catalog, answer)) return catalog.clusters[*hit].representative;

    request.messages.front().parts.emplace_back(
        TextPart{"Your previous answer \"" + answer + "\" is not in the list. Answer with one listed atom only."});
    answer = gateway->complete(request).text;
    if (auto hit = match_listed(catalog, answer)) return catalog.clusters[*hit].representative;
    spdlog::warn("filter_atom: off-list answer '{}' after retry, using overlap rule", answer);
  }
  return catalog.clusters[mock_pick(catalog, probabilities, caption)].representative;
}

Atom filter_atom(const AtomCatalog& catalog, const Caption& caption, Gateway* gateway, FilterMode mode) {
  std::vector<double> p;
  const double total = static_cast<double>(std::max<std::size_t>(1, catalog.total_raw));
  for (const auto& c : catalog.clusters) p.push_back(static_cast<double>(c.count) / total);
  return filter_atom(catalog, p, caption, gateway, mode);
}

ExplanationChain build_chain(const SampleRelevance& sample, const AcdDatabase& db, const Caption& caption,
                             Gateway* filter_gateway, const ChainOptions& options) {
  ExplanationChain chain;
  chain.sample_id = sample.sample_id;
  chain.image_path = sample.image_path.generic_string();
  chain.label = sample.label;
  chain.prediction = sample.prediction;
  chain.caption = caption;
  chain.alpha = options.alpha;

  const auto layers = db.layers();
  for (const auto& [name, values] : sample.per_layer_values) {
    auto it = std::find_if(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.name == name; });
    if (it == layers.end()) throw Error("layer '" + name + "' is not in the ACD database");
    if (values.size() != it->dimension)
      throw Error("layer '" + name + "': relevance vector has " + std::to_string(values.size()) +
                  " values, database has " + std::to_string(it->dimension) + " channels");
  }

  for (const auto& layer : layers) {
    auto vit = sample.per_layer_values.find(layer.name);
    if (vit == sample.per_layer_values.end()) continue;
    auto sel = select_top_concepts(vit->second, options.alpha);
    CircuitNode node{layer.name, layer.stage_order, {}, sel.fallback};
    for (const auto& item : sel.items) {
      const auto* rec = db.find(layer.name, item.index);
      if (!rec || !rec->ok())
        throw Error("no catalog for selected channel " + layer.name + "/" + std::to_string(item.index));
      std::vector<double> probs;
      for (std::size_t i = 0; i < rec->catalog.clusters.size(); ++i) probs.push_back(rec->probability(i));
      auto atom = filter_atom(rec->catalog, probs, caption, filter_gateway, options.filter_mode, options.filter_model_tag);
      node.selected.push_back({item.index, item.value, std::move(atom), layer.name + "/" + std::to_string(item.index)});
    }
    chain.nodes.push_back(std::move(node));
  }
  if (chain.nodes.empty()) throw Error("sample '" + sample.sample_id + "' has no layer vectors");
  return chain;
}

namespace {

double round4(double v) { return std::round(v * 1e4) / 1e4; }

}  // namespace

json chain_prompt_block(const ExplanationChain& chain) {
  json path = json::array();
  for (const auto& node : chain.nodes) {
    json concepts = json::array();
    for (const auto& c : node.selected) concepts.push_back({{"concept", c.atom.text()}, {"relevance", round4(c.relevance)}});
    path.push_back({{"layer", node.layer}, {"concepts", std::move(concepts)}});
  }
  return {{"prediction", chain.prediction}, {"label", chain.label}, {"caption", chain.caption.text}, {"path", std::move(path)}};
}

ChatRequest render_synthesis_prompt(const ExplanationChain& chain, const SynthesisOptions& options) {
  auto block = chain_prompt_block(chain);
  auto text = prompts::render(prompts::coe(), {{"prediction", chain.prediction},
                                               {"label", chain.label},
                                               {"caption", chain.caption.text},
                                               {"chain", block.dump(2)}});
  auto req = make_request(options.model_tag, options.temperature, std::move(text));
  req.max_output = options.max_output;
  return req;
}

ExplanationChain synthesize(ExplanationChain chain, Gateway& gateway, const SynthesisOptions& options) {
  auto resp = gateway.complete(render_synthesis_prompt(chain, options));
  std::string narrative = resp.text;
  auto b = narrative.find_first_not_of(" \t\r\n");
  auto e = narrative.find_last_not_of(" \t\r\n");
  narrative = b == std::string::npos ? "" : narrative.substr(b, e - b + 1);
  if (narrative.empty()) throw GatewayError("synthesizer returned an empty narrative");

  auto first_sentence = narrative.substr(0, narrative.find_first_of(".!?\n"));
  std::transform(first_sentence.begin(), first_sentence.end(), first_sentence.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (first_sentence.find("correct") == std::string::npos)
    spdlog::warn("sample {}: narrative does not open with a correctness statement", chain.sample_id);
  chain.narrative = std::move(narrative);
  return chain;
}

json chain_to_json(const ExplanationChain& chain) {
  json nodes = json::array();
  for (const auto& n : chain.nodes) {
    json selected = json::array();
    for (const auto& c : n.selected)
      selected.push_back({{"channel", c.channel}, {"relevance", c.relevance}, {"atom", c.atom.text()}, {"catalog_ref", c.catalog_ref}});
    nodes.push_back({{"layer", n.layer}, {"stage_order", n.stage_order}, {"k_l", n.k()}, {"fallback", n.fallback},
                     {"selected", std::move(selected)}});
  }
  return {{"sample_id", chain.sample_id},
          {"image_path", chain.image_path},
          {"label", chain.label},
          {"prediction", chain.prediction},
          {"caption", chain.caption.text},
          {"caption_source", chain.caption.source == CaptionSource::ProvidedFile ? "provided-file" : "captioner-backend"},
          {"alpha", chain.alpha},
          {"nodes", std::move(nodes)},
          {"narrative", chain.narrative}};
}

ExplanationChain chain_from_json(const json& j) {
  try {
    ExplanationChain c;
    c.sample_id = j.at("sample_id").get<std::string>();
    c.image_path = j.value("image_path", std::string{});
    c.label = j.at("label").get<std::string>();
    c.prediction = j.at("prediction").get<std::string>();
    c.caption = {j.at("caption").get<std::string>(), j.value("caption_source", std::string("provided-file")) == "provided-file"
                                                         ? CaptionSource::ProvidedFile
                                                         : CaptionSource::CaptionerBackend};
    c.alpha = j.value("alpha", 0.0);
    for (const auto& jn : j.at("nodes")) {
      CircuitNode n{jn.at("layer").get<std::string>(), jn.value("stage_order", 0), {}, jn.value("fallback", false)};
      for (const auto& js : jn.at("selected"))
        n.selected.push_back({js.at("channel").get<std::size_t>(), js.at("relevance").get<double>(),
                              Atom::from_normalized(js.at("atom").get<std::string>()), js.value("catalog_ref", std::string{})});
      c.nodes.push_back(std::move(n));
    }
    c.narrative = j.value("narrative", std::string{});
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed chain document: ") + e.what());
  }
}

bool same_class(std::string_view a, std::string_view b) {
  auto norm = [](std::string_view s) {
    auto toks = overlap_tokens(s);
    std::string out;
    for (const auto& t : toks) out += (out.empty() ? "" : " ") + t;
    return out;
  };
  return norm(a) == norm(b);
}

}  // namespace coe
