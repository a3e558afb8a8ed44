#include "coe/acd.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include <spdlog/spdlog.h>

#include "coe/error.hpp"
#include "coe/prompts.hpp"

namespace coe {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

void strip_edges(std::string& s) {
  std::size_t b = 0;
  while (b < s.size() && (is_space(s[b]) || is_punct(s[b]))) ++b;
  std::size_t e = s.size();
  while (e > b && (is_space(s[e - 1]) || is_punct(s[e - 1]))) --e;
  s = s.substr(b, e - b);
}

}  // namespace

Atom normalize_atom(std::string_view raw) {
  std::string s;
  s.reserve(raw.size());
  for (unsigned char c : raw) s += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
  strip_edges(s);

  std::vector<std::string> words;
  std::string cur;
  for (char c : s) {
    if (is_space(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));

  // Truncation can expose trailing punctuation ("a b - c" -> "a b -"), so
  // strip and re-split until the word list is stable.
  while (true) {
    if (words.size() > kMaxAtomWords) words.resize(kMaxAtomWords);
    std::string joined;
    for (const auto& w : words) {
      if (!joined.empty()) joined += ' ';
      joined += w;
    }
    std::string stripped = joined;
    strip_edges(stripped);
    if (stripped == joined) break;
    words.clear();
    std::string w;
    for (char c : stripped) {
      if (c == ' ') {
        if (!w.empty()) words.push_back(std::move(w)), w.clear();
      } else {
        w += c;
      }
    }
    if (!w.empty()) words.push_back(std::move(w));
  }

  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  if (out.empty()) throw ParseError("atom '" + std::string(raw) + "' is empty after normalization");
  return Atom(std::move(out));
}

Atom Atom::from_normalized(std::string text) {
  auto a = normalize_atom(text);
  if (a.text() != text) throw ParseError("'" + text + "' is not a normalized atom");
  return a;
}

std::size_t RawAtomTable::total() const {
  std::size_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::size_t RawAtomTable::frequency(const Atom& a) const {
  auto it = std::find(unique_atoms.begin(), unique_atoms.end(), a);
  return it == unique_atoms.end() ? 0 : counts[static_cast<std::size_t>(it - unique_atoms.begin())];
}

RawAtomTable tally(std::vector<PatchAtoms> per_patch) {
  RawAtomTable t;
  std::map<std::string, std::size_t> slot;
  for (const auto& p : per_patch) {
    for (const auto& a : p.atoms) {
      auto [it, inserted] = slot.emplace(a.text(), t.unique_atoms.size());
      if (inserted) {
        t.unique_atoms.push_back(a);
        t.counts.push_back(0);
      }
      ++t.counts[it->second];
    }
  }
  t.per_patch = std::move(per_patch);
  return t;
}

RawAtomTable table_from_counts(const std::vector<std::pair<std::string, std::size_t>>& counts) {
  RawAtomTable t;
  for (const auto& [text, count] : counts) {
    auto a = normalize_atom(text);
    if (std::find(t.unique_atoms.begin(), t.unique_atoms.end(), a) != t.unique_atoms.end())
      throw ParseError("duplicate atom '" + a.text() + "'");
    t.unique_atoms.push_back(std::move(a));
    t.counts.push_back(count);
  }
  return t;
}

std::vector<ImagePart> load_patch_images(const ConceptManifest& manifest, const VisualConcept& vc) {
  std::vector<ImagePart> out;
  out.reserve(vc.patches.size());
  for (const auto& p : vc.patches) {
    auto path = manifest.root / p.image_path;
    out.push_back({media_type_for(path), read_file_bytes(path)});
  }
  return out;
}

ChatRequest render_describe_prompt(const VisualConcept& vc, const std::vector<ImagePart>& patches,
                                   const DescribeOptions& options) {
  if (patches.empty())
    throw ParseError("concept " + vc.layer + "/" + std::to_string(vc.channel_index) + " has no patches");
  auto text = prompts::render(prompts::describe(),
                              {{"n_images", std::to_string(patches.size())}, {"q", std::to_string(options.q)}});
  auto req = make_request(options.model_tag, options.temperature, std::move(text), patches);
  req.max_output = options.max_output;
  return req;
}

namespace {

// Accepts "3", "image 3", "Image_3" and similar; returns 0 when no digits.
std::size_t key_index(const std::string& key) {
  std::size_t v = 0;
  bool any = false;
  for (char c : key) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      v = v * 10 + static_cast<std::size_t>(c - '0');
      any = true;
    } else if (any) {
      break;
    }
  }
  return any ? v : 0;
}

std::vector<std::string> raw_values(const json& v) {
  std::vector<std::string> out;
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_array()) {
    for (const auto& e : v)
      if (e.is_string()) out.push_back(e.get<std::string>());
  } else if (v.is_object()) {
    for (const auto& [k, e] : v.items())
      if (e.is_string()) out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace

ParsedAtoms parse_atoms(std::string_view response_text, std::size_t n, std::size_t q) {
  if (q == 0) throw ParseError("q must be >= 1");
  json doc = extract_json_object(response_text);

  std::map<std::size_t, const json*> by_index;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto idx = key_index(it.key());
    if (idx >= 1 && idx <= n) by_index.emplace(idx, &it.value());
  }

  ParsedAtoms out;
  std::vector<std::size_t> missing;
  for (std::size_t i = 1; i <= n; ++i) {
    auto it = by_index.find(i);
    if (it == by_index.end()) {
      missing.push_back(i - 1);
      continue;
    }
    PatchAtoms pa{i - 1, {}};
    for (const auto& raw : raw_values(*it->second)) {
      try {
        pa.atoms.push_back(normalize_atom(raw));
      } catch (const ParseError&) {
        out.warnings.push_back("image " + std::to_string(i) + ": dropped empty atom '" + raw + "'");
      }
    }
    if (pa.atoms.empty()) throw ParseError("image " + std::to_string(i) + ": no atom recoverable");
    if (pa.atoms.size() > q) {
      out.warnings.push_back("image " + std::to_string(i) + ": truncated " + std::to_string(pa.atoms.size()) +
                             " atoms to " + std::to_string(q));
      pa.atoms.erase(pa.atoms.begin() + static_cast<std::ptrdiff_t>(q), pa.atoms.end());
    }
    if (pa.atoms.size() < q) {
      out.warnings.push_back("image " + std::to_string(i) + ": padded " + std::to_string(pa.atoms.size()) +
                             " atoms to " + std::to_string(q) + " with its first atom");
      while (pa.atoms.size() < q) pa.atoms.push_back(pa.atoms.front());
    }
    out.per_patch.push_back(std::move(pa));
  }
  if (!missing.empty()) {
    std::string list;
    for (auto m : missing) list += (list.empty() ? "" : ", ") + std::to_string(m + 1);
    throw MissingPatchesError(missing, "response omits images: " + list);
  }
  for (const auto& w : out.warnings) spdlog::warn("parse_atoms: {}", w);
  return out;
}

DescribeResult describe_concept(const VisualConcept& vc, const std::vector<ImagePart>& patches, Gateway& gateway,
                                const DescribeOptions& options) {
  auto request = render_describe_prompt(vc, patches, options);
  auto response = gateway.complete(request);
  ParsedAtoms parsed;
  try {
    parsed = parse_atoms(response.text, patches.size(), options.q);
  } catch (const MissingPatchesError& e) {
    std::string list;
    for (auto m : e.missing) list += (list.empty() ? "" : ", ") + std::to_string(m + 1);
    auto retry = request;
    retry.messages.front().parts.emplace_back(
        TextPart{"Your previous answer omitted images " + list + ". Answer again for all " +
                 std::to_string(patches.size()) + " images."});
    spdlog::warn("{}/{}: {}; re-querying once", vc.layer, vc.channel_index, e.what());
    parsed = parse_atoms(gateway.complete(retry).text, patches.size(), options.q);
    parsed.warnings.insert(parsed.warnings.begin(), std::string("re-queried: ") + e.what());
  }
  return {tally(std::move(parsed.per_patch)), std::move(parsed.warnings)};
}

}  // namespace coe
