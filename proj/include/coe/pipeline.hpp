#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coe/acd.hpp"
#include "coe/acd_database.hpp"
#include "coe/chain.hpp"
#include "coe/evaluation.hpp"
#include "coe/llm_gateway.hpp"
#include "coe/manifest.hpp"
#include "coe/semantic_clustering.hpp"

namespace coe {

inline constexpr std::array<const char*, 6> kRoles = {"describer", "entailment", "filter",
                                                      "synthesizer", "judge", "captioner"};

// Per-role backend selection.
//   chat roles:  mock | remote | replay | none
//   entailment:  lexical | nli | nli-replay | llm | llm-replay
struct BackendConfig {
  std::string mode;
  std::string model_tag;
  std::string backend_id;  // cache namespace, defaults to the role name
  std::string url;
  std::string api_key_env = "COE_API_KEY";
  std::filesystem::path script;  // mock script, synonym file for lexical
  std::size_t max_in_flight = 4;
};

struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path db = "acd.jsonl";
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path captions;  // sidecar {sample_id: caption}; optional
  std::optional<std::size_t> n;    // must match the manifest when set
  std::size_t q = 3;
  double alpha = 0.001;
  MergePolicy policy = MergePolicy::Strict;
  std::size_t parallel = 1;
  std::uint64_t seed = 0;
  std::map<std::string, BackendConfig> backends;

  RunConfig();
  // Relative paths in the document resolve against base_dir.
  static RunConfig from_json(const json& doc, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  const BackendConfig& backend(const std::string& role) const;
};

std::shared_ptr<Gateway> make_gateway(const RunConfig& cfg, const std::string& role);
std::unique_ptr<EntailmentBackend> make_entailment(const RunConfig& cfg);

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception
// is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

// One record per manifest concept. A concept whose description or
// clustering fails is kept with status failed; a backend outage (anything
// but a replay miss at the gateway level) aborts.
AcdRecord describe_record(const ConceptManifest& manifest, const VisualConcept& vc, const DescribeOptions& opts,
                          Gateway& describer, EntailmentBackend& entailment, MergePolicy policy);
AcdDatabase build_acd(const ConceptManifest& manifest, const DescribeOptions& opts, Gateway& describer,
                      EntailmentBackend& entailment, MergePolicy policy, std::size_t parallel);

struct BuildSummary {
  std::size_t concepts = 0;
  std::size_t failed = 0;
};
BuildSummary cmd_build_acd(const RunConfig& cfg);

enum class CpeLevel { Channel, Layer, Model, All };
CpeLevel cpe_level_from_string(const std::string& s);

struct CpeReportOptions {
  CpeLevel level = CpeLevel::All;
  bool fail_on_failed = false;  // refuse layer means when a channel failed
};

// Described channels by padded CPE, highest first, then failed ones.
std::vector<const AcdRecord*> channels_by_cpe(const AcdDatabase& db);

// {"channels": [...], "layers": [...], "model": {...}}, limited to `level`.
json cpe_report(const AcdDatabase& db, const CpeReportOptions& options = {});
std::string cpe_channels_csv(const AcdDatabase& db);

// Builds, synthesizes and writes <out_dir>/<sample_id>.json per relevance
// file. Returns the written chains.
std::vector<ExplanationChain> cmd_explain(const RunConfig& cfg, const std::vector<std::filesystem::path>& relevance_files,
                                          const std::filesystem::path& out_dir);

// Scores chain documents with the judge role.
json cmd_judge(const RunConfig& cfg, const std::vector<std::filesystem::path>& chain_files);

// methods: name -> directory of chain documents.
BundleSummary cmd_export_bundle(const std::map<std::string, std::filesystem::path>& methods,
                                const std::filesystem::path& out_dir, const BundleOptions& options);
json cmd_import_scores(const std::vector<std::filesystem::path>& sheets, const std::filesystem::path& mapping);

json cmd_consistency(const std::filesystem::path& pairs_csv, const AcdDatabase* db);

// predictions CSV: sample_id,label,prediction.
json cmd_sample(const std::filesystem::path& predictions_csv, std::size_t n, double correct_fraction, std::uint64_t seed);

}  // namespace coe
