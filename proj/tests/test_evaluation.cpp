#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "coe/error.hpp"
#include "coe/evaluation.hpp"
#include "coe/mock_backends.hpp"
#include "coe/prompts.hpp"
#include "test_util.hpp"

using coe::json;
using testutil::TempDir;

namespace {

std::string judge_reply(int a, int c, int u) {
  return json{{"accuracy", {{"evidence", "a"}, {"score", a}}},
              {"completeness", {{"evidence", "c"}, {"score", c}}},
              {"user_interpretability", {{"evidence", "u"}, {"score", u}}},
              {"total", a + c + u}}
      .dump();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<coe::BundleSample> samples(const TempDir& dir, std::size_t n) {
  std::ofstream(dir / "img.png") << "fake image";
  std::vector<coe::BundleSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%03zu", i);
    out.push_back({id, dir / "img.png",
                   {{"chain", "chain narrative " + std::string(id)}, {"baseline", "baseline text " + std::string(id)}}});
  }
  return out;
}

// Fills every blank score row of a sheet with the given cell value.
std::string fill(const std::string& sheet, const std::string& cell) {
  std::istringstream in(sheet);
  std::string line, out;
  std::getline(in, line);
  out = line + "\n";
  while (std::getline(in, line)) out += line.substr(0, line.size() - 2) + cell + "," + cell + "," + cell + "\n";
  return out;
}

}  // namespace

TEST_CASE("explanation scores") {
  coe::ExplanationScore s(2, 2, 1);
  CHECK(s.total() == 5);
  CHECK(s.get(coe::Criterion::UserInterpretability) == 1);
  CHECK_THROWS_AS(coe::ExplanationScore(3, 0, 0), coe::EvaluationError);
  CHECK_THROWS_AS(coe::ExplanationScore(0, -1, 0), coe::EvaluationError);
  CHECK(coe::score_to_json(s)["total"] == 5);
}

TEST_CASE("judge response parsing") {
  CHECK(coe::parse_judge_response(judge_reply(2, 1, 0)) == coe::ExplanationScore(2, 1, 0));
  CHECK(coe::parse_judge_response("```json\n" + judge_reply(1, 1, 1) + "\n```").total() == 3);
  CHECK(coe::parse_judge_response(R"({"accuracy":{"score":"2"},"completeness":{"score":1.0},"user_interpretability":0})")
            .total() == 3);
  CHECK_THROWS_AS(coe::parse_judge_response(R"({"accuracy":{"score":2},"completeness":{"score":1}})"), coe::ParseError);
  CHECK_THROWS_AS(coe::parse_judge_response(judge_reply(3, 1, 1)), coe::EvaluationError);
  CHECK_THROWS_AS(coe::parse_judge_response(R"({"accuracy":1.5,"completeness":1,"user_interpretability":1})"),
                  coe::ParseError);
  auto s = coe::parse_judge_response(judge_reply(1, 2, 0));
  CHECK(s.evidence(coe::Criterion::Completeness) == "c");
}

TEST_CASE("judge prompt carries the rubric and one image") {
  auto req = coe::render_judge_prompt({"image/png", "x"}, "tench", "tench", "The prediction is correct.", {});
  CHECK(req.images().size() == 1);
  CHECK(req.all_text().find(std::string(coe::prompts::rubric())) != std::string::npos);
  CHECK(req.temperature == 0.0);
}

TEST_CASE("judge retries once on a format violation") {
  int calls = 0;
  auto gw = coe::Gateway::mock("j", [&](const coe::ChatRequest&) { return ++calls == 1 ? "no idea" : judge_reply(2, 2, 1); });
  CHECK(coe::judge_explanation({"image/png", "x"}, "p", "l", "n", *gw).total() == 5);
  CHECK(calls == 2);

  auto bad = coe::Gateway::mock("j", [](const coe::ChatRequest&) { return std::string("still nothing"); });
  CHECK_THROWS_AS(coe::judge_explanation({"image/png", "x"}, "p", "l", "n", *bad), coe::ParseError);
}

TEST_CASE("scripted judge replies") {
  const std::string narrative = "The prediction is correct.";
  auto gw = coe::Gateway::mock("j", coe::mock_judge({{coe::sha256_hex(narrative), judge_reply(0, 1, 2)}}));
  CHECK(coe::judge_explanation({"image/png", "x"}, "p", "p", narrative, *gw) == coe::ExplanationScore(0, 1, 2));
}

TEST_CASE("heuristic mock judge") {
  auto gw = coe::Gateway::mock("j", coe::mock_judge());
  const std::string good =
      "The prediction is correct: \"a\", \"b\", \"c\" and \"d\" all point to the label.";
  CHECK(coe::judge_explanation({"image/png", "x"}, "tench", "tench", good, *gw) == coe::ExplanationScore(2, 2, 2));
  const std::string wrong_claim = "The prediction is correct. Nothing else.";
  auto s = coe::judge_explanation({"image/png", "x"}, "goldfish", "tench", wrong_claim, *gw);
  CHECK(s.accuracy() == 0);
  CHECK(s.completeness() == 0);
}

TEST_CASE("score aggregation") {
  std::vector<coe::ExplanationScore> scores{{2, 1, 2}, {1, 2, 1}};
  auto a = coe::aggregate_scores(scores);
  CHECK(a.accuracy == doctest::Approx(1.5));
  CHECK(a.completeness == doctest::Approx(1.5));
  CHECK(a.user_interpretability == doctest::Approx(1.5));
  CHECK(a.total == doctest::Approx(4.5));
  CHECK(a.n_samples == 2);
  CHECK_THROWS_AS(coe::aggregate_scores(std::vector<coe::ExplanationScore>{}), coe::EvaluationError);
}

TEST_CASE("human bundle export and import") {
  TempDir dir;
  auto in = samples(dir, 100);
  const auto out = dir / "bundle";
  auto summary = coe::export_human_bundle(in, out, {10, 42});
  CHECK(summary.records == 100);
  CHECK(summary.sheets == 10);

  auto mapping = coe::read_json_file(out / "anonymization.json");
  CHECK(mapping.size() == 100);
  CHECK(mapping["s000"]["group_id"] == 1);
  CHECK(mapping["s099"]["group_id"] == 10);
  CHECK(mapping["s010"]["group_id"] == 2);

  // records and sheets never name a method
  for (const auto& entry : std::filesystem::recursive_directory_iterator(out)) {
    if (!entry.is_regular_file() || entry.path().filename() == "anonymization.json") continue;
    const auto text = slurp(entry.path());
    CHECK(text.find("chain\"") == std::string::npos);
    CHECK(text.find("baseline\"") == std::string::npos);
    CHECK(text.find(",chain,") == std::string::npos);
  }
  auto rec = coe::read_json_file(out / "records" / "s005.json");
  CHECK(rec["explanations"].size() == 2);
  CHECK(std::filesystem::exists(out / rec["image"].get<std::string>()));

  // same seed, same aliases
  coe::export_human_bundle(in, dir / "again", {10, 42});
  CHECK(coe::read_json_file(dir / "again" / "anonymization.json") == mapping);

  std::vector<std::filesystem::path> filled;
  for (std::size_t g = 1; g <= 10; ++g) {
    char name[32];
    std::snprintf(name, sizeof name, "group_%02zu.csv", g);
    const auto sheet = slurp(out / "sheets" / name);
    CHECK(sheet.rfind(coe::kSheetHeader, 0) == 0);
    filled.push_back(dir / ("filled_" + std::string(name)));
    std::ofstream(filled.back()) << fill(sheet, "2");
  }
  auto by_method = coe::import_human_scores(filled, out / "anonymization.json");
  REQUIRE(by_method.size() == 2);
  CHECK(by_method["chain"].size() == 100);
  CHECK(coe::aggregate_scores(by_method["baseline"]).total == doctest::Approx(6.0));

  SUBCASE("value outside the scale") {
    std::ofstream(filled[0]) << fill(slurp(out / "sheets" / "group_01.csv"), "4");
    CHECK_THROWS_WITH_AS(coe::import_human_scores({filled[0]}, out / "anonymization.json"),
                         doctest::Contains("out-of-range value '4'"), coe::EvaluationError);
  }
  SUBCASE("blank cell") {
    std::ofstream(filled[0]) << slurp(out / "sheets" / "group_01.csv");
    CHECK_THROWS_WITH_AS(coe::import_human_scores({filled[0]}, out / "anonymization.json"),
                         doctest::Contains("incomplete sheet"), coe::EvaluationError);
  }
  SUBCASE("missing rows") {
    auto text = fill(slurp(out / "sheets" / "group_01.csv"), "1");
    text.erase(text.rfind('\n', text.size() - 2) + 1);  // drop last row
    std::ofstream(filled[0]) << text;
    CHECK_THROWS_WITH_AS(coe::import_human_scores({filled[0]}, out / "anonymization.json"),
                         doctest::Contains("missing rows for samples: s009"), coe::EvaluationError);
  }
}

TEST_CASE("import recovers a known fill pattern") {
  TempDir dir;
  auto in = samples(dir, 12);
  const auto out = dir / "bundle";
  coe::export_human_bundle(in, out, {3, 7});
  const auto mapping = coe::read_json_file(out / "anonymization.json");
  // score = (sample index + alias number + criterion) mod 3
  auto value = [](const std::string& sample_id, const std::string& alias, int criterion) {
    return (std::stoi(sample_id.substr(1)) + std::stoi(alias.substr(2)) + criterion) % 3;
  };
  std::vector<std::filesystem::path> filled;
  std::map<std::string, std::multiset<std::array<int, 3>>> expected;
  for (int g = 1; g <= 3; ++g) {
    std::istringstream sheet(slurp(out / "sheets" / ("group_0" + std::to_string(g) + ".csv")));
    std::string line, text;
    std::getline(sheet, line);
    text = line + "\n";
    while (std::getline(sheet, line)) {
      std::istringstream row(line);
      std::string group, sample_id, alias;
      std::getline(row, group, ',');
      std::getline(row, sample_id, ',');
      std::getline(row, alias, ',');
      std::array<int, 3> v{value(sample_id, alias, 0), value(sample_id, alias, 1), value(sample_id, alias, 2)};
      expected[mapping[sample_id]["aliases"][alias].get<std::string>()].insert(v);
      text += group + "," + sample_id + "," + alias + "," + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," +
              std::to_string(v[2]) + "\n";
    }
    filled.push_back(dir / ("f" + std::to_string(g) + ".csv"));
    std::ofstream(filled.back()) << text;
  }
  auto got = coe::import_human_scores(filled, out / "anonymization.json");
  REQUIRE(got.size() == expected.size());
  for (const auto& [method, scores] : got) {
    std::multiset<std::array<int, 3>> seen;
    for (const auto& s : scores) seen.insert({s.accuracy(), s.completeness(), s.user_interpretability()});
    CHECK(seen == expected[method]);
  }
}

TEST_CASE("bundle export rejects missing inputs") {
  TempDir dir;
  auto in = samples(dir, 3);
  SUBCASE("missing image") {
    in[1].image_path = dir / "nope.png";
    CHECK_THROWS_WITH_AS(coe::export_human_bundle(in, dir / "b"), doctest::Contains("missing image"),
                         coe::EvaluationError);
  }
  SUBCASE("empty narrative") {
    in[2].narratives["chain"].clear();
    CHECK_THROWS_AS(coe::export_human_bundle(in, dir / "b"), coe::EvaluationError);
  }
}

TEST_CASE("CPE vs human consistency on the 12-pair fixture") {
  auto pairs = coe::load_pairs_csv(testutil::fixtures() / "pairs" / "pairs_12.csv", nullptr);
  REQUIRE(pairs.size() == 12);
  // independent restatement: mean > 1 <=> sum of three ratings > 3
  std::size_t agree = 0;
  for (const auto& p : pairs) {
    const int sum = p.human_scores[0] + p.human_scores[1] + p.human_scores[2];
    if ((sum > 3) == (p.cpe_upper > p.cpe_lower)) ++agree;
  }
  CHECK(agree == 8);
  auto r = coe::cpe_human_consistency(pairs);
  CHECK(r.agreements == 8);
  CHECK(r.rate == doctest::Approx(0.667).epsilon(1e-3));

  pairs[0].human_scores.pop_back();
  CHECK_THROWS_AS(coe::cpe_human_consistency(pairs), coe::EvaluationError);
  CHECK_THROWS_AS(coe::cpe_human_consistency(std::vector<coe::PairJudgment>{}), coe::EvaluationError);
}

TEST_CASE("pairs without CPE columns need a database") {
  TempDir dir;
  std::ofstream(dir / "p.csv") << "pair_id,upper_ref,lower_ref,rater_1,rater_2,rater_3\nP1,l/0,l/1,2,2,2\n";
  CHECK_THROWS_AS(coe::load_pairs_csv(dir / "p.csv", nullptr), coe::EvaluationError);

  auto rec = [](std::size_t ch, std::vector<std::pair<std::string, std::size_t>> counts) {
    coe::AcdRecord r;
    r.layer = "l";
    r.layer_dim = 2;
    r.channel = ch;
    r.n_patches = 15;
    r.q = 3;
    r.table = coe::table_from_counts(counts);
    r.catalog = coe::unclustered(r.table);
    r.dist = coe::distribution(r.catalog, 3, 15);
    r.cpe = coe::score_concept(r.table, r.catalog, r.dist);
    return r;
  };
  coe::AcdDatabase db({rec(0, {{"a", 15}, {"b", 15}, {"c", 15}}), rec(1, {{"a", 45}})});
  auto pairs = coe::load_pairs_csv(dir / "p.csv", &db);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].cpe_upper == db.find("l", 0)->cpe.h_padded);
  CHECK(pairs[0].verdict_cpe());
  CHECK(pairs[0].verdict_human());
}

TEST_CASE("outcome-stratified sampling") {
  std::vector<bool> correct(1000);
  for (std::size_t i = 0; i < correct.size(); ++i) correct[i] = i % 4 != 0;  // 750 correct
  auto pick = coe::outcome_stratified_sample(correct, 100, 0.7, 9);
  REQUIRE(pick.size() == 100);
  CHECK(std::is_sorted(pick.begin(), pick.end()));
  CHECK(std::adjacent_find(pick.begin(), pick.end()) == pick.end());
  std::size_t n_correct = 0;
  for (auto i : pick) n_correct += correct[i];
  CHECK(n_correct == 70);
  CHECK(coe::outcome_stratified_sample(correct, 100, 0.7, 9) == pick);
  CHECK(coe::outcome_stratified_sample(correct, 100, 0.7, 10) != pick);
  CHECK_THROWS(coe::outcome_stratified_sample(correct, 400, 0.3, 0));  // only 250 incorrect
}
