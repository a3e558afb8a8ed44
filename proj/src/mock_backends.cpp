#include "coe/mock_backends.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "coe/chain.hpp"
#include "coe/error.hpp"

namespace coe {

DescriberScript DescriberScript::load(const std::filesystem::path& path) {
  auto doc = read_json_file(path);
  DescriberScript s;
  try {
    if (doc.contains("vocabulary")) s.vocabulary = doc["vocabulary"].get<std::vector<std::string>>();
    if (doc.contains("images"))
      for (const auto& [sha, atoms] : doc["images"].items()) s.by_image_sha[sha] = atoms.get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": malformed describer script: " + e.what());
  }
  if (s.vocabulary.empty()) s.vocabulary = {"object", "texture", "color patch"};
  return s;
}

MockFn mock_describer(DescriberScript script, std::size_t q) {
  return [script = std::move(script), q](const ChatRequest& request) {
    json out = json::object();
    const auto images = request.images();
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto sha = sha256_hex(images[i]->bytes);
      json atoms = json::array();
      if (auto it = script.by_image_sha.find(sha); it != script.by_image_sha.end()) {
        if (it->second.empty()) continue;
        for (const auto& a : it->second) atoms.push_back(a);
      } else {
        for (std::size_t k = 0; k < q; ++k) {
          auto h = sha256_hex(sha + ":" + std::to_string(k));
          auto idx = std::stoull(h.substr(0, 12), nullptr, 16) % script.vocabulary.size();
          atoms.push_back(script.vocabulary[idx]);
        }
      }
      out[std::to_string(i + 1)] = std::move(atoms);
    }
    return out.dump();
  };
}

std::optional<std::string> extract_block(std::string_view text, std::string_view name) {
  const std::string open = "<<<" + std::string(name) + "\n";
  const std::string close = "\n" + std::string(name) + ">>>";
  auto b = text.find(open);
  if (b == std::string_view::npos) return std::nullopt;
  b += open.size();
  auto e = text.find(close, b);
  if (e == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(b, e - b));
}

namespace {

std::string fmt_relevance(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

MockFn mock_synthesizer() {
  return [](const ChatRequest& request) -> std::string {
    auto block = extract_block(request.all_text(), "CHAIN");
    if (!block) throw GatewayError("mock synthesizer: prompt has no chain block");
    auto doc = json::parse(*block, nullptr, false);
    if (doc.is_discarded()) throw GatewayError("mock synthesizer: chain block is not JSON");

    const auto prediction = doc.at("prediction").get<std::string>();
    const auto label = doc.at("label").get<std::string>();
    const bool correct = same_class(prediction, label);
    std::ostringstream out;
    out << "The prediction is " << (correct ? "correct" : "incorrect") << ": the model predicted \"" << prediction
        << (correct ? "\" and" : "\" but") << " the label is \"" << label << "\".";
    const auto caption = doc.value("caption", std::string{});
    if (!caption.empty()) out << " The image shows " << caption << ".";

    std::string top;
    for (const auto& node : doc.at("path")) {
      const auto& concepts = node.at("concepts");
      if (concepts.empty()) continue;
      out << " In layer " << node.at("layer").get<std::string>() << " the model responds to ";
      for (std::size_t i = 0; i < concepts.size(); ++i) {
        if (i) out << (i + 1 == concepts.size() ? " and " : ", ");
        out << "\"" << concepts[i].at("concept").get<std::string>() << "\" ("
            << fmt_relevance(concepts[i].at("relevance").get<double>()) << ")";
      }
      out << ".";
      top = concepts.front().at("concept").get<std::string>();
    }
    if (!top.empty())
      out << " The strongest concept in the deepest layer is \"" << top << "\", which "
          << (correct ? "supports the prediction." : "pulled the decision away from the label.");
    return out.str();
  };
}

namespace {

std::size_t quoted_phrases(const std::string& text) {
  std::vector<std::string> seen;
  std::size_t pos = 0;
  while (true) {
    auto b = text.find('"', pos);
    if (b == std::string::npos) break;
    auto e = text.find('"', b + 1);
    if (e == std::string::npos) break;
    auto s = text.substr(b + 1, e - b - 1);
    if (std::find(seen.begin(), seen.end(), s) == seen.end()) seen.push_back(s);
    pos = e + 1;
  }
  return seen.size();
}

std::string line_value(const std::string& text, const std::string& prefix) {
  auto b = text.find(prefix);
  if (b == std::string::npos) return {};
  b += prefix.size();
  return text.substr(b, text.find('\n', b) - b);
}

}  // namespace

MockFn mock_judge(std::map<std::string, std::string> scripted) {
  return [scripted = std::move(scripted)](const ChatRequest& request) -> std::string {
    const auto text = request.all_text();
    auto expl = extract_block(text, "EXPLANATION");
    if (!expl) throw GatewayError("mock judge: prompt has no explanation block");
    if (auto it = scripted.find(sha256_hex(*expl)); it != scripted.end()) return it->second;

    const bool correct = same_class(line_value(text, "Model prediction: "), line_value(text, "Ground-truth label: "));
    std::string first = expl->substr(0, expl->find_first_of(".!?\n"));
    std::transform(first.begin(), first.end(), first.begin(), [](unsigned char c) { return std::tolower(c); });
    int accuracy = 1;
    if (first.find("incorrect") != std::string::npos) accuracy = correct ? 0 : 2;
    else if (first.find("correct") != std::string::npos) accuracy = correct ? 2 : 0;

    const auto concepts = quoted_phrases(*expl);
    const int completeness = concepts >= 4 ? 2 : concepts >= 1 ? 1 : 0;

    std::istringstream words(*expl);
    std::size_t n_words = 0;
    for (std::string w; words >> w;) ++n_words;
    const int interpretability = n_words <= 200 ? 2 : n_words <= 300 ? 1 : 0;

    json out = {{"accuracy", {{"evidence", "correctness statement checked"}, {"score", accuracy}}},
                {"completeness", {{"evidence", std::to_string(concepts) + " concepts named"}, {"score", completeness}}},
                {"user_interpretability",
                 {{"evidence", std::to_string(n_words) + " words"}, {"score", interpretability}}},
                {"total", accuracy + completeness + interpretability}};
    return out.dump();
  };
}

MockFn mock_captioner(std::map<std::string, std::string> by_image_sha) {
  return [by_image_sha = std::move(by_image_sha)](const ChatRequest& request) -> std::string {
    const auto images = request.images();
    if (images.empty()) throw GatewayError("mock captioner: no image");
    auto it = by_image_sha.find(sha256_hex(images.front()->bytes));
    return it == by_image_sha.end() ? "an image" : it->second;
  };
}

}  // namespace coe
