#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "coe/acd.hpp"
#include "coe/llm_gateway.hpp"

namespace coe {

enum class Verdict : int { Contradict = -1, Neutral = 0, Entail = 1 };

std::string to_string(Verdict v);
Verdict verdict_from_label(std::string_view label);

// Directional entailment: does `premise` entail `hypothesis`?
class EntailmentBackend {
 public:
  virtual ~EntailmentBackend() = default;
  virtual Verdict judge(const Atom& premise, const Atom& hypothesis) = 0;
};

// Reflexive pairs are Entail without consulting the backend.
Verdict entail(const Atom& premise, const Atom& hypothesis, EntailmentBackend& backend);

// Synonym-table oracle. Each line of the table file is one comma-separated
// equivalence group; a line starting with '!' lists mutually contradicting
// atoms; '#' starts a comment.
//   premise -> hypothesis is Entail when both sit in one synonym group, or
//   every hypothesis token (after mapping single-token synonyms) appears in
//   the premise. It is Contradict when both atoms sit in one '!' group.
//   Everything else is Neutral.
class LexicalOracle : public EntailmentBackend {
 public:
  LexicalOracle() = default;
  static LexicalOracle from_file(const std::filesystem::path& path);
  static LexicalOracle from_text(std::string_view text);

  void add_synonyms(const std::vector<std::string>& group);
  void add_contradictions(const std::vector<std::string>& group);

  Verdict judge(const Atom& premise, const Atom& hypothesis) override;

 private:
  std::string canonical_token(const std::string& token) const;

  std::map<std::string, std::size_t> synonym_group_;
  std::map<std::string, std::size_t> contradiction_group_;
  std::size_t next_group_ = 0;
};

// Fixed directional verdict table; pairs absent from the table are Neutral.
class VerdictTable : public EntailmentBackend {
 public:
  void set(const std::string& premise, const std::string& hypothesis, Verdict v) {
    table_[{premise, hypothesis}] = v;
  }
  Verdict judge(const Atom& premise, const Atom& hypothesis) override;
  std::size_t calls() const { return calls_; }

 private:
  std::map<std::pair<std::string, std::string>, Verdict> table_;
  std::size_t calls_ = 0;
};

struct NliConfig {
  std::string backend_id = "nli";
  std::string url;
  RetryPolicy retry;
};

// Remote NLI model: POST {premise, hypothesis} -> {label}. Verdicts are
// cached through the same record store the chat gateway uses, and in replay
// mode only cached verdicts are served.
class NliEndpointBackend : public EntailmentBackend {
 public:
  NliEndpointBackend(NliConfig config, std::shared_ptr<Transport> transport, std::shared_ptr<ResponseCache> cache,
                     bool replay_only = false);
  Verdict judge(const Atom& premise, const Atom& hypothesis) override;

 private:
  NliConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<ResponseCache> cache_;
  bool replay_only_;
};

// Asks a chat model for the label through the gateway.
class LlmJudgeEntailment : public EntailmentBackend {
 public:
  LlmJudgeEntailment(std::shared_ptr<Gateway> gateway, std::string model_tag = "entailment")
      : gateway_(std::move(gateway)), model_tag_(std::move(model_tag)) {}
  Verdict judge(const Atom& premise, const Atom& hypothesis) override;

 private:
  std::shared_ptr<Gateway> gateway_;
  std::string model_tag_;
};

enum class MergePolicy {
  Strict,        // both directions Entail
  NoContradiction,  // neither direction Contradict
};

std::string to_string(MergePolicy p);
MergePolicy merge_policy_from_string(const std::string& s);

bool merge_decision(const Atom& a, const Atom& b, MergePolicy policy, EntailmentBackend& backend);

struct AtomCluster {
  Atom representative;
  std::vector<Atom> members;  // members.front() == representative
  std::size_t count = 0;      // summed member frequencies
};

struct AtomCatalog {
  std::vector<AtomCluster> clusters;
  std::size_t total_raw = 0;

  std::size_t p_star() const { return clusters.size(); }
};

// Greedy single pass over unique atoms in first-occurrence order: each atom
// joins the earliest cluster whose representative it merges with, else
// founds a new cluster.
AtomCatalog cluster(const RawAtomTable& table, MergePolicy policy, EntailmentBackend& backend);

// One singleton cluster per unique atom.
AtomCatalog unclustered(const RawAtomTable& table);

}  // namespace coe
