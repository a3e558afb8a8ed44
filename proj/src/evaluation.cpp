#include "coe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "coe/error.hpp"
#include "coe/prompts.hpp"

namespace coe {

namespace fs = std::filesystem;

ExplanationScore::ExplanationScore(int accuracy, int completeness, int user_interpretability,
                                   std::array<std::string, 3> evidence)
    : scores_{accuracy, completeness, user_interpretability}, evidence_(std::move(evidence)) {
  for (std::size_t i = 0; i < 3; ++i) {
    if (scores_[i] < 0 || scores_[i] > 2)
      throw EvaluationError(std::string(kCriterionKeys[i]) + " score " + std::to_string(scores_[i]) +
                            " outside {0,1,2}");
  }
}

json score_to_json(const ExplanationScore& s) {
  json j = json::object();
  for (std::size_t i = 0; i < 3; ++i) {
    auto c = static_cast<Criterion>(i);
    j[kCriterionKeys[i]] = {{"score", s.get(c)}, {"evidence", s.evidence(c)}};
  }
  j["total"] = s.total();
  return j;
}

ChatRequest render_judge_prompt(const ImagePart& image, const std::string& prediction, const std::string& label,
                                const std::string& narrative, const JudgeOptions& options) {
  auto text = prompts::render(prompts::coe_eval(), {{"prediction", prediction},
                                                    {"label", label},
                                                    {"explanation", narrative},
                                                    {"rubric", std::string(prompts::rubric())}});
  auto req = make_request(options.model_tag, options.temperature, std::move(text), {image});
  req.max_output = options.max_output;
  return req;
}

namespace {

int read_score(const json& v, const char* key) {
  const json* s = &v;
  if (v.is_object()) {
    if (!v.contains("score")) throw ParseError(std::string(key) + ": missing score");
    s = &v.at("score");
  }
  if (s->is_number_integer()) return s->get<int>();
  if (s->is_number_float()) {
    double d = s->get<double>();
    if (d != std::floor(d)) throw ParseError(std::string(key) + ": non-integer score");
    return static_cast<int>(d);
  }
  if (s->is_string()) {
    auto str = s->get<std::string>();
    try {
      std::size_t used = 0;
      int x = std::stoi(str, &used);
      if (used == str.size()) return x;
    } catch (const std::exception&) {
    }
  }
  throw ParseError(std::string(key) + ": score is not an integer");
}

}  // namespace

ExplanationScore parse_judge_response(std::string_view text) {
  auto doc = extract_json_object(text);
  std::array<int, 3> scores{};
  std::array<std::string, 3> evidence;
  for (std::size_t i = 0; i < 3; ++i) {
    const char* key = kCriterionKeys[i];
    if (!doc.contains(key)) throw ParseError(std::string("judge response lacks '") + key + "'");
    const auto& v = doc.at(key);
    scores[i] = read_score(v, key);
    if (v.is_object() && v.contains("evidence") && v["evidence"].is_string()) evidence[i] = v["evidence"].get<std::string>();
  }
  ExplanationScore s(scores[0], scores[1], scores[2], std::move(evidence));
  if (doc.contains("total") && doc["total"].is_number() && doc["total"].get<int>() != s.total())
    spdlog::warn("judge total {} disagrees with criterion sum {}; using the sum", doc["total"].get<int>(), s.total());
  return s;
}

ExplanationScore judge_explanation(const ImagePart& image, const std::string& prediction, const std::string& label,
                                   const std::string& narrative, Gateway& gateway, const JudgeOptions& options) {
  auto request = render_judge_prompt(image, prediction, label, narrative, options);
  try {
    return parse_judge_response(gateway.complete(request).text);
  } catch (const Error& e) {
    if (dynamic_cast<const GatewayError*>(&e)) throw;
    spdlog::warn("judge format violation ({}); retrying once", e.what());
    request.messages.front().parts.emplace_back(TextPart{
        std::string("Your previous answer was rejected: ") + e.what() +
        ". Reply with the JSON object only, every score being 0, 1 or 2."});
    return parse_judge_response(gateway.complete(request).text);
  }
}

ScoreAggregate aggregate_scores(std::span<const ExplanationScore> scores) {
  if (scores.empty()) throw EvaluationError("no scores to aggregate");
  ScoreAggregate a;
  for (const auto& s : scores) {
    a.accuracy += s.accuracy();
    a.completeness += s.completeness();
    a.user_interpretability += s.user_interpretability();
    a.total += s.total();
  }
  const double n = static_cast<double>(scores.size());
  a.accuracy /= n;
  a.completeness /= n;
  a.user_interpretability /= n;
  a.total /= n;
  a.n_samples = scores.size();
  return a;
}

json aggregate_to_json(const ScoreAggregate& a) {
  return {{"accuracy", a.accuracy},
          {"completeness", a.completeness},
          {"user_interpretability", a.user_interpretability},
          {"total", a.total},
          {"n_samples", a.n_samples}};
}

// ---- human bundle ---------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    auto b = f.find_first_not_of(" \t");
    auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
  }
  return out;
}

std::string group_name(std::size_t g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "group_%02zu", g);
  return buf;
}

}  // namespace

BundleSummary export_human_bundle(const std::vector<BundleSample>& samples, const fs::path& out_dir,
                                  const BundleOptions& options) {
  if (samples.empty()) throw EvaluationError("no samples to export");
  const std::size_t n_groups = std::clamp<std::size_t>(options.n_groups, 1, samples.size());
  for (const auto& s : samples) {
    if (s.sample_id.empty() || s.sample_id.find_first_of(",/\\\n") != std::string::npos)
      throw EvaluationError("sample id '" + s.sample_id + "' cannot be used in a score sheet");
    if (s.narratives.empty()) throw EvaluationError("sample " + s.sample_id + ": missing narrative");
    for (const auto& [method, text] : s.narratives)
      if (text.empty()) throw EvaluationError("sample " + s.sample_id + ": missing narrative for " + method);
    if (!fs::is_regular_file(s.image_path))
      throw EvaluationError("sample " + s.sample_id + ": missing image " + s.image_path.string());
  }

  fs::create_directories(out_dir / "records");
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "sheets");

  std::mt19937_64 rng(options.seed);
  json mapping = json::object();
  std::vector<std::string> sheets(n_groups, std::string(kSheetHeader) + "\n");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::size_t group = i * n_groups / samples.size() + 1;

    std::vector<std::string> methods;
    for (const auto& [m, _] : s.narratives) methods.push_back(m);
    for (std::size_t k = methods.size(); k > 1; --k) std::swap(methods[k - 1], methods[rng() % k]);

    json aliases = json::object();
    json explanations = json::array();
    for (std::size_t k = 0; k < methods.size(); ++k) {
      const auto alias = "Ex" + std::to_string(k + 1);
      aliases[alias] = methods[k];
      explanations.push_back({{"alias", alias}, {"text", s.narratives.at(methods[k])}});
      sheets[group - 1] += std::to_string(group) + "," + s.sample_id + "," + alias + ",,,\n";
    }
    const auto image_name = s.sample_id + s.image_path.extension().string();
    fs::copy_file(s.image_path, out_dir / "images" / image_name, fs::copy_options::overwrite_existing);
    json record = {{"sample_id", s.sample_id},
                   {"group_id", group},
                   {"image", "images/" + image_name},
                   {"explanations", std::move(explanations)},
                   {"rubric", std::string(prompts::rubric())}};
    write_file_atomic(out_dir / "records" / (s.sample_id + ".json"), record.dump(2) + "\n");
    mapping[s.sample_id] = {{"group_id", group}, {"aliases", std::move(aliases)}};
  }
  for (std::size_t g = 0; g < n_groups; ++g)
    write_file_atomic(out_dir / "sheets" / (group_name(g + 1) + ".csv"), sheets[g]);
  write_file_atomic(out_dir / "anonymization.json", mapping.dump(2) + "\n");
  return {samples.size(), n_groups};
}

std::map<std::string, std::vector<ExplanationScore>> import_human_scores(const std::vector<fs::path>& sheets,
                                                                         const fs::path& mapping_file) {
  if (sheets.empty()) throw EvaluationError("no score sheets given");
  const auto mapping = read_json_file(mapping_file);
  std::map<std::string, std::vector<ExplanationScore>> out;

  for (const auto& sheet : sheets) {
    std::ifstream in(sheet);
    if (!in) throw EvaluationError("cannot read sheet " + sheet.string());
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kSheetHeader))
      throw EvaluationError(sheet.string() + ": unexpected header");

    std::set<std::size_t> groups;
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<std::pair<std::string, ExplanationScore>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto where = sheet.string() + ":" + std::to_string(lineno);
      auto f = split_csv_line(line);
      if (f.size() != 6) throw EvaluationError(where + ": expected 6 columns");
      const auto& sample_id = f[1];
      const auto& alias = f[2];
      if (!mapping.contains(sample_id)) throw EvaluationError(where + ": unknown sample " + sample_id);
      const auto& entry = mapping.at(sample_id);
      if (!entry.at("aliases").contains(alias)) throw EvaluationError(where + ": unknown alias " + alias);
      groups.insert(entry.at("group_id").get<std::size_t>());
      if (!seen.emplace(sample_id, alias).second) throw EvaluationError(where + ": duplicate row");
      std::array<int, 3> v{};
      for (std::size_t i = 0; i < 3; ++i) {
        const auto& cell = f[3 + i];
        if (cell.empty()) throw EvaluationError(where + ": incomplete sheet, empty " + kCriterionKeys[i]);
        if (cell != "0" && cell != "1" && cell != "2")
          throw EvaluationError(where + ": out-of-range value '" + cell + "' for " + kCriterionKeys[i]);
        v[i] = cell[0] - '0';
      }
      rows.emplace_back(entry.at("aliases").at(alias).get<std::string>(), ExplanationScore(v[0], v[1], v[2]));
    }
    if (rows.empty()) throw EvaluationError(sheet.string() + ": incomplete sheet, no rows");

    std::set<std::string> absent;
    for (const auto& [sample_id, entry] : mapping.items()) {
      if (!groups.count(entry.at("group_id").get<std::size_t>())) continue;
      for (const auto& [alias, _] : entry.at("aliases").items())
        if (!seen.count({sample_id, alias})) absent.insert(sample_id);
    }
    if (!absent.empty()) {
      std::string list;
      for (const auto& a : absent) list += (list.empty() ? "" : ", ") + a;
      throw EvaluationError(sheet.string() + ": incomplete sheet, missing rows for samples: " + list);
    }
    for (auto& [method, score] : rows) out[method].push_back(std::move(score));
  }
  return out;
}

// ---- consistency ----------------------------------------------------------

bool PairJudgment::verdict_human() const {
  if (human_scores.empty()) return false;
  double sum = 0.0;
  for (int s : human_scores) sum += s;
  return sum / static_cast<double>(human_scores.size()) > 1.0;
}

ConsistencyReport cpe_human_consistency(std::span<const PairJudgment> pairs) {
  if (pairs.empty()) throw EvaluationError("no pairs");
  ConsistencyReport r;
  for (const auto& p : pairs) {
    if (p.human_scores.size() != 3)
      throw EvaluationError("pair " + p.pair_id + ": expected 3 ratings, got " + std::to_string(p.human_scores.size()));
    if (p.verdict_human() == p.verdict_cpe()) ++r.agreements;
  }
  r.n_pairs = pairs.size();
  r.rate = static_cast<double>(r.agreements) / static_cast<double>(r.n_pairs);
  return r;
}

json consistency_to_json(const ConsistencyReport& r) {
  return {{"n_pairs", r.n_pairs}, {"agreements", r.agreements}, {"rate", r.rate}};
}

namespace {

double cpe_of(const std::string& ref, const AcdDatabase* db, const std::string& where) {
  if (!db) throw EvaluationError(where + ": no CPE column and no database to look up " + ref);
  auto slash = ref.rfind('/');
  if (slash == std::string::npos) throw EvaluationError(where + ": concept ref '" + ref + "' is not layer/channel");
  std::size_t channel = 0;
  try {
    channel = std::stoul(ref.substr(slash + 1));
  } catch (const std::exception&) {
    throw EvaluationError(where + ": bad channel in '" + ref + "'");
  }
  const auto* rec = db->find(ref.substr(0, slash), channel);
  if (!rec || !rec->ok()) throw EvaluationError(where + ": no described concept " + ref);
  return rec->cpe.h_padded;
}

}  // namespace

std::vector<PairJudgment> load_pairs_csv(const fs::path& path, const AcdDatabase* db) {
  std::ifstream in(path);
  if (!in) throw EvaluationError("cannot read pairs file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw EvaluationError(path.string() + ": empty pairs file");
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  for (const char* required : {"pair_id", "upper_ref", "lower_ref"})
    if (!col(required)) throw EvaluationError(path.string() + ": missing column " + required);
  std::vector<std::size_t> rater_cols;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i].rfind("rater_", 0) == 0) rater_cols.push_back(i);

  std::vector<PairJudgment> pairs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    auto f = split_csv_line(line);
    if (f.size() != header.size()) throw EvaluationError(where + ": column count mismatch");
    PairJudgment p;
    p.pair_id = f[*col("pair_id")];
    p.upper_ref = f[*col("upper_ref")];
    p.lower_ref = f[*col("lower_ref")];
    for (auto c : rater_cols) {
      if (f[c].empty()) continue;
      if (f[c] != "0" && f[c] != "1" && f[c] != "2") throw EvaluationError(where + ": rating '" + f[c] + "' outside {0,1,2}");
      p.human_scores.push_back(f[c][0] - '0');
    }
    auto cu = col("cpe_upper");
    auto cl = col("cpe_lower");
    p.cpe_upper = cu && !f[*cu].empty() ? std::stod(f[*cu]) : cpe_of(p.upper_ref, db, where);
    p.cpe_lower = cl && !f[*cl].empty() ? std::stod(f[*cl]) : cpe_of(p.lower_ref, db, where);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---- sampling -------------------------------------------------------------

std::vector<std::size_t> outcome_stratified_sample(const std::vector<bool>& correct, std::size_t n,
                                                   double correct_fraction, std::uint64_t seed) {
  if (!(correct_fraction >= 0.0 && correct_fraction <= 1.0)) throw Error("correct_fraction must lie in [0, 1]");
  std::vector<std::size_t> right, wrong;
  for (std::size_t i = 0; i < correct.size(); ++i) (correct[i] ? right : wrong).push_back(i);
  const auto n_right = static_cast<std::size_t>(std::llround(static_cast<double>(n) * correct_fraction));
  const auto n_wrong = n - n_right;
  if (n_right > right.size() || n_wrong > wrong.size())
    throw Error("not enough samples: need " + std::to_string(n_right) + " correct / " + std::to_string(n_wrong) +
                " incorrect, have " + std::to_string(right.size()) + " / " + std::to_string(wrong.size()));

  std::mt19937_64 rng(seed);
  auto take = [&](std::vector<std::size_t>& pool, std::size_t k, std::vector<std::size_t>& out) {
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  };
  std::vector<std::size_t> out;
  take(right, n_right, out);
  take(wrong, n_wrong, out);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace coe
