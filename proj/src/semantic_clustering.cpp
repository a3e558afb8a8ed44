#include "coe/semantic_clustering.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "coe/error.hpp"
#include "coe/prompts.hpp"

namespace coe {

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Entail: return "entailment";
    case Verdict::Neutral: return "neutral";
    case Verdict::Contradict: return "contradiction";
  }
  return "neutral";
}

Verdict verdict_from_label(std::string_view label) {
  std::string s;
  for (char c : label)
    if (std::isalpha(static_cast<unsigned char>(c))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s.rfind("entail", 0) == 0) return Verdict::Entail;
  if (s.rfind("neutral", 0) == 0) return Verdict::Neutral;
  if (s.rfind("contradict", 0) == 0) return Verdict::Contradict;
  throw ParseError("unknown entailment label '" + std::string(label) + "'");
}

Verdict entail(const Atom& premise, const Atom& hypothesis, EntailmentBackend& backend) {
  if (premise == hypothesis) return Verdict::Entail;
  return backend.judge(premise, hypothesis);
}

// ---- lexical oracle -------------------------------------------------------

namespace {

std::vector<std::string> split_group(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    try {
      out.push_back(normalize_atom(cur).text());
    } catch (const ParseError&) {
    }
    cur.clear();
  };
  for (char c : line) {
    if (c == ',' || c == '\t') flush();
    else cur += c;
  }
  flush();
  return out;
}

std::vector<std::string> tokens_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

}  // namespace

LexicalOracle LexicalOracle::from_text(std::string_view text) {
  LexicalOracle o;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '!') o.add_contradictions(split_group(std::string_view(line).substr(first + 1)));
    else o.add_synonyms(split_group(line));
  }
  return o;
}

LexicalOracle LexicalOracle::from_file(const std::filesystem::path& path) {
  return from_text(read_file_bytes(path));
}

void LexicalOracle::add_synonyms(const std::vector<std::string>& group) {
  if (group.size() < 2) return;
  // Joining an atom that already belongs to a group merges the groups.
  std::size_t id = next_group_++;
  std::set<std::size_t> absorbed;
  for (const auto& a : group)
    if (auto it = synonym_group_.find(a); it != synonym_group_.end()) absorbed.insert(it->second);
  for (auto& [atom, g] : synonym_group_)
    if (absorbed.count(g)) g = id;
  for (const auto& a : group) synonym_group_[a] = id;
}

void LexicalOracle::add_contradictions(const std::vector<std::string>& group) {
  if (group.size() < 2) return;
  std::size_t id = next_group_++;
  for (const auto& a : group) contradiction_group_[a] = id;
}

std::string LexicalOracle::canonical_token(const std::string& token) const {
  auto it = synonym_group_.find(token);
  return it == synonym_group_.end() ? token : "#" + std::to_string(it->second);
}

Verdict LexicalOracle::judge(const Atom& premise, const Atom& hypothesis) {
  const auto& p = premise.text();
  const auto& h = hypothesis.text();
  if (p == h) return Verdict::Entail;
  auto sp = synonym_group_.find(p);
  auto sh = synonym_group_.find(h);
  if (sp != synonym_group_.end() && sh != synonym_group_.end() && sp->second == sh->second) return Verdict::Entail;
  auto cp = contradiction_group_.find(p);
  auto ch = contradiction_group_.find(h);
  if (cp != contradiction_group_.end() && ch != contradiction_group_.end() && cp->second == ch->second)
    return Verdict::Contradict;

  std::set<std::string> premise_tokens;
  for (const auto& t : tokens_of(p)) premise_tokens.insert(canonical_token(t));
  for (const auto& t : tokens_of(h))
    if (!premise_tokens.count(canonical_token(t))) return Verdict::Neutral;
  return Verdict::Entail;
}

Verdict VerdictTable::judge(const Atom& premise, const Atom& hypothesis) {
  ++calls_;
  auto it = table_.find({premise.text(), hypothesis.text()});
  return it == table_.end() ? Verdict::Neutral : it->second;
}

// ---- remote backends ------------------------------------------------------

NliEndpointBackend::NliEndpointBackend(NliConfig config, std::shared_ptr<Transport> transport,
                                       std::shared_ptr<ResponseCache> cache, bool replay_only)
    : config_(std::move(config)), transport_(std::move(transport)), cache_(std::move(cache)), replay_only_(replay_only) {}

Verdict NliEndpointBackend::judge(const Atom& premise, const Atom& hypothesis) {
  json body = {{"premise", premise.text()}, {"hypothesis", hypothesis.text()}};
  const auto key = sha256_hex(canonical_dump({{"backend_id", config_.backend_id}, {"request", body}}));
  if (cache_) {
    if (auto rec = cache_->get(key)) return verdict_from_label(rec->at("response").get<std::string>());
  }
  if (replay_only_) throw ReplayMiss(key);
  if (!transport_ || config_.url.empty()) throw GatewayError("NLI endpoint not configured");

  auto res = post_with_retry(*transport_, config_.url, body.dump(), {}, config_.retry);
  auto doc = json::parse(res.body, nullptr, false);
  if (doc.is_discarded() || !doc.contains("label") || !doc["label"].is_string())
    throw TransportError("NLI response lacks a label: " + res.body);
  auto label = doc["label"].get<std::string>();
  auto verdict = verdict_from_label(label);
  if (cache_) cache_->put(key, {{"key", key}, {"backend_id", config_.backend_id}, {"request", body}, {"response", to_string(verdict)}});
  return verdict;
}

Verdict LlmJudgeEntailment::judge(const Atom& premise, const Atom& hypothesis) {
  auto text = prompts::render(prompts::entail(), {{"premise", premise.text()}, {"hypothesis", hypothesis.text()}});
  auto resp = gateway_->complete(make_request(model_tag_, 0.0, std::move(text)));
  return verdict_from_label(resp.text);
}

// ---- clustering -----------------------------------------------------------

std::string to_string(MergePolicy p) { return p == MergePolicy::Strict ? "strict" : "no-contradiction"; }

MergePolicy merge_policy_from_string(const std::string& s) {
  if (s == "strict") return MergePolicy::Strict;
  if (s == "no-contradiction") return MergePolicy::NoContradiction;
  throw Error("unknown merge policy '" + s + "'");
}

bool merge_decision(const Atom& a, const Atom& b, MergePolicy policy, EntailmentBackend& backend) {
  auto forward = entail(a, b, backend);
  if (policy == MergePolicy::Strict) {
    if (forward != Verdict::Entail) return false;
    return entail(b, a, backend) == Verdict::Entail;
  }
  if (forward == Verdict::Contradict) return false;
  return entail(b, a, backend) != Verdict::Contradict;
}

AtomCatalog cluster(const RawAtomTable& table, MergePolicy policy, EntailmentBackend& backend) {
  AtomCatalog cat;
  for (std::size_t i = 0; i < table.unique_atoms.size(); ++i) {
    const auto& atom = table.unique_atoms[i];
    const auto count = table.counts[i];
    cat.total_raw += count;
    auto target = std::find_if(cat.clusters.begin(), cat.clusters.end(), [&](const AtomCluster& c) {
      return merge_decision(c.representative, atom, policy, backend);
    });
    if (target == cat.clusters.end()) {
      cat.clusters.push_back({atom, {atom}, count});
    } else {
      target->members.push_back(atom);
      target->count += count;
    }
  }
  return cat;
}

AtomCatalog unclustered(const RawAtomTable& table) {
  AtomCatalog cat;
  for (std::size_t i = 0; i < table.unique_atoms.size(); ++i) {
    cat.clusters.push_back({table.unique_atoms[i], {table.unique_atoms[i]}, table.counts[i]});
    cat.total_raw += table.counts[i];
  }
  return cat;
}

}  // namespace coe
