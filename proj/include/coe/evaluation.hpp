#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coe/acd_database.hpp"
#include "coe/llm_gateway.hpp"

namespace coe {

enum class Criterion { Accuracy = 0, Completeness = 1, UserInterpretability = 2 };
inline constexpr std::array<const char*, 3> kCriterionKeys = {"accuracy", "completeness", "user_interpretability"};

// Three-criterion rubric score, each criterion in {0, 1, 2}.
class ExplanationScore {
 public:
  // Throws EvaluationError when a value is outside {0, 1, 2}.
  ExplanationScore(int accuracy, int completeness, int user_interpretability,
                   std::array<std::string, 3> evidence = {});

  int accuracy() const { return scores_[0]; }
  int completeness() const { return scores_[1]; }
  int user_interpretability() const { return scores_[2]; }
  int get(Criterion c) const { return scores_[static_cast<std::size_t>(c)]; }
  const std::string& evidence(Criterion c) const { return evidence_[static_cast<std::size_t>(c)]; }
  int total() const { return scores_[0] + scores_[1] + scores_[2]; }

  bool operator==(const ExplanationScore& o) const { return scores_ == o.scores_; }

 private:
  std::array<int, 3> scores_;
  std::array<std::string, 3> evidence_;
};

json score_to_json(const ExplanationScore& s);

struct JudgeOptions {
  std::string model_tag = "judge";
  double temperature = 0.0;
  int max_output = 1024;
};

ChatRequest render_judge_prompt(const ImagePart& image, const std::string& prediction, const std::string& label,
                                const std::string& narrative, const JudgeOptions& options);

// Parses {"accuracy": {"evidence", "score"}, ...}. Throws ParseError on a
// format violation and EvaluationError on an out-of-range score.
ExplanationScore parse_judge_response(std::string_view text);

// One retry on any format violation.
ExplanationScore judge_explanation(const ImagePart& image, const std::string& prediction, const std::string& label,
                                   const std::string& narrative, Gateway& gateway, const JudgeOptions& options = {});

struct ScoreAggregate {
  double accuracy = 0.0;
  double completeness = 0.0;
  double user_interpretability = 0.0;
  double total = 0.0;
  std::size_t n_samples = 0;
};

ScoreAggregate aggregate_scores(std::span<const ExplanationScore> scores);
json aggregate_to_json(const ScoreAggregate& a);

// ---- offline human annotation --------------------------------------------

struct BundleSample {
  std::string sample_id;
  std::filesystem::path image_path;
  std::map<std::string, std::string> narratives;  // method name -> explanation
};

struct BundleOptions {
  std::size_t n_groups = 10;
  std::uint64_t seed = 0;
};

struct BundleSummary {
  std::size_t records = 0;
  std::size_t sheets = 0;
};

inline constexpr const char* kSheetHeader = "group_id,sample_id,method_alias,accuracy,completeness,user_interpretability";

// Writes records/<sample_id>.json (image copy, explanations as Ex1.., rubric),
// sheets/group_XX.csv (blank score rows) and anonymization.json (alias ->
// method). Samples are split into contiguous groups.
BundleSummary export_human_bundle(const std::vector<BundleSample>& samples, const std::filesystem::path& out_dir,
                                  const BundleOptions& options = {});

// Reads filled sheets (any number of rater copies per group) and returns
// scores per method. Every sheet must be complete for the groups it covers.
std::map<std::string, std::vector<ExplanationScore>> import_human_scores(
    const std::vector<std::filesystem::path>& sheets, const std::filesystem::path& mapping_file);

// ---- CPE vs human polysemanticity ----------------------------------------

struct PairJudgment {
  std::string pair_id;
  std::string upper_ref;
  std::string lower_ref;
  std::vector<int> human_scores;  // one per rater
  double cpe_upper = 0.0;
  double cpe_lower = 0.0;

  // Mean rater score above 1: the upper concept is more polysemantic.
  bool verdict_human() const;
  bool verdict_cpe() const { return cpe_upper > cpe_lower; }
};

struct ConsistencyReport {
  std::size_t n_pairs = 0;
  std::size_t agreements = 0;
  double rate = 0.0;
};

ConsistencyReport cpe_human_consistency(std::span<const PairJudgment> pairs);
json consistency_to_json(const ConsistencyReport& r);

// CSV with columns pair_id,upper_ref,lower_ref,rater_1,rater_2,rater_3 and
// optional cpe_upper,cpe_lower. Refs are "layer/channel"; missing CPE
// columns are filled from `db`.
std::vector<PairJudgment> load_pairs_csv(const std::filesystem::path& path, const AcdDatabase* db);

// ---- sampling -------------------------------------------------------------

// Picks n indices, round(n * correct_fraction) among correct outcomes and the
// rest among incorrect ones, uniformly within each group. Returned sorted.
std::vector<std::size_t> outcome_stratified_sample(const std::vector<bool>& correct, std::size_t n,
                                                   double correct_fraction = 0.7, std::uint64_t seed = 0);

}  // namespace coe
