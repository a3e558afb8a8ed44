#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "coe/chain.hpp"
#include "coe/error.hpp"
#include "coe/mock_backends.hpp"
#include "oracles.hpp"

using coe::json;

namespace {

coe::AcdRecord make_record(const std::string& layer, int stage, std::size_t dim, std::size_t ch,
                           const std::vector<std::pair<std::string, std::size_t>>& counts) {
  coe::AcdRecord r;
  r.layer = layer;
  r.stage_order = stage;
  r.layer_dim = dim;
  r.channel = ch;
  r.n_patches = 15;
  r.q = 3;
  r.table = coe::table_from_counts(counts);
  r.catalog = coe::unclustered(r.table);
  r.dist = coe::distribution(r.catalog, 3, 15);
  r.cpe = coe::score_concept(r.table, r.catalog, r.dist);
  return r;
}

// Two layers with two channels each.
coe::AcdDatabase tiny_db() {
  return coe::AcdDatabase({
      make_record("early", 0, 2, 0, {{"gray texture", 30}, {"water", 15}}),
      make_record("early", 0, 2, 1, {{"fin", 45}}),
      make_record("late", 1, 2, 0, {{"shark", 20}, {"shark fin", 15}, {"ocean", 10}}),
      make_record("late", 1, 2, 1, {{"net", 45}}),
  });
}

coe::SampleRelevance tiny_sample(bool correct) {
  coe::SampleRelevance s;
  s.sample_id = "s1";
  s.image_path = "s1.png";
  s.label = "great white shark";
  s.prediction = correct ? "great white shark" : "tiger shark";
  s.per_layer_values = {{"early", {0.9, 0.3}}, {"late", {0.2, 1.0}}};
  return s;
}

std::vector<std::size_t> indices(const coe::Selection& s) {
  std::vector<std::size_t> out;
  for (const auto& it : s.items) out.push_back(it.index);
  return out;
}

}  // namespace

TEST_CASE("top concept selection") {
  const std::vector<double> v{0.9, 0.1, -0.5, 0.9, 0.0005};
  auto sel = coe::select_top_concepts(v, 0.1);
  CHECK(indices(sel) == std::vector<std::size_t>{0, 3, 1});
  CHECK_FALSE(sel.fallback);

  const std::vector<double> w{0.5, 0.01, 0.2, 1.0};
  CHECK(indices(coe::select_top_concepts(w, 0.3)) == std::vector<std::size_t>{3, 0});
  CHECK(indices(coe::select_top_concepts(w, 0.001)) == std::vector<std::size_t>{3, 0, 2, 1});

  SUBCASE("equal to the threshold is excluded") {
    const std::vector<double> e{1.0, 0.5};
    CHECK(indices(coe::select_top_concepts(e, 0.5)) == std::vector<std::size_t>{0});
  }
  SUBCASE("non-positive maximum falls back to the top entry") {
    const std::vector<double> neg{-0.3, -0.1, -0.2};
    auto f = coe::select_top_concepts(neg, 0.001);
    CHECK(f.fallback);
    CHECK(indices(f) == std::vector<std::size_t>{1});
    const std::vector<double> zeros(4, 0.0);
    CHECK(indices(coe::select_top_concepts(zeros, 0.5)) == std::vector<std::size_t>{0});
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(coe::select_top_concepts(std::vector<double>{}, 0.1), coe::Error);
    CHECK_THROWS_AS(coe::select_top_concepts(v, 0.0), coe::Error);
    CHECK_THROWS_AS(coe::select_top_concepts(v, 1.0), coe::Error);
  }
}

TEST_CASE("selection agrees with the oracle and is monotone in alpha") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + rng() % 300);
    for (auto& x : v) x = (rng() % 5 == 0) ? 0.25 : u(rng);  // ties on purpose
    const double a1 = 0.001 + 0.5 * (rng() % 1000) / 1000.0;
    const double a2 = std::min(0.999, a1 + 0.2);
    auto s1 = coe::select_top_concepts(v, a1);
    CHECK(indices(s1) == oracle::select(v, a1));
    CHECK(s1.items.size() >= coe::select_top_concepts(v, a2).items.size());
    CHECK_FALSE(s1.items.empty());
  }
}

TEST_CASE("mock filter prefers caption overlap, then probability") {
  auto cat = coe::unclustered(coe::table_from_counts({{"ocean", 20}, {"gray shark", 10}, {"shark fin", 10}, {"sand", 5}}));
  const std::vector<double> probs{0.4, 0.2, 0.2, 0.1};
  coe::Caption cap{"A large gray shark swimming near the surface", coe::CaptionSource::ProvidedFile};
  CHECK(coe::filter_atom(cat, probs, cap, nullptr, coe::FilterMode::Mock).text() == "gray shark");

  coe::Caption none{"a photo", coe::CaptionSource::ProvidedFile};
  CHECK(coe::filter_atom(cat, probs, none, nullptr, coe::FilterMode::Mock).text() == "ocean");

  // equal overlap and probability: lexicographic
  coe::Caption fin{"a shark", coe::CaptionSource::ProvidedFile};
  CHECK(coe::filter_atom(cat, probs, fin, nullptr, coe::FilterMode::Mock).text() == "gray shark");
}

TEST_CASE("llm filter retries once, then falls back to the overlap rule") {
  auto cat = coe::unclustered(coe::table_from_counts({{"ocean", 20}, {"gray shark", 10}}));
  const std::vector<double> probs{0.6, 0.3};
  coe::Caption cap{"a gray shark", coe::CaptionSource::ProvidedFile};

  int calls = 0;
  auto listed = coe::Gateway::mock("f", [&](const coe::ChatRequest&) { return ++calls == 1 ? "whale" : "Ocean."; });
  CHECK(coe::filter_atom(cat, probs, cap, listed.get(), coe::FilterMode::Llm).text() == "ocean");
  CHECK(calls == 2);

  auto off = coe::Gateway::mock("f", [](const coe::ChatRequest&) { return "whale"; });
  CHECK(coe::filter_atom(cat, probs, cap, off.get(), coe::FilterMode::Llm).text() == "gray shark");
  CHECK_THROWS_AS(coe::filter_atom(cat, probs, cap, nullptr, coe::FilterMode::Llm), coe::Error);
}

TEST_CASE("chain construction") {
  auto db = tiny_db();
  coe::Caption cap{"a shark near a net", coe::CaptionSource::ProvidedFile};
  coe::ChainOptions opt;
  opt.alpha = 0.5;
  auto chain = coe::build_chain(tiny_sample(true), db, cap, nullptr, opt);
  REQUIRE(chain.nodes.size() == 2);
  CHECK(chain.nodes[0].layer == "early");
  CHECK(chain.nodes[0].k() == 1);
  CHECK(chain.nodes[0].selected[0].atom.text() == "gray texture");
  REQUIRE(chain.nodes[1].k() == 1);
  CHECK(chain.nodes[1].selected[0].channel == 1);
  CHECK(chain.nodes[1].selected[0].atom.text() == "net");
  CHECK(chain.nodes[1].selected[0].catalog_ref == "late/1");

  auto back = coe::chain_from_json(json::parse(coe::chain_to_json(chain).dump()));
  CHECK(coe::chain_to_json(back) == coe::chain_to_json(chain));

  SUBCASE("layer missing from the database") {
    auto s = tiny_sample(true);
    s.per_layer_values["middle"] = {0.1};
    CHECK_THROWS_AS(coe::build_chain(s, db, cap, nullptr, opt), coe::Error);
  }
  SUBCASE("wrong vector length") {
    auto s = tiny_sample(true);
    s.per_layer_values["late"] = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(coe::build_chain(s, db, cap, nullptr, opt), coe::Error);
  }
  SUBCASE("selected channel without a catalog") {
    auto records = db.records();
    records[1].status = coe::DescribeStatus::Failed;
    coe::AcdDatabase broken(records);
    auto s = tiny_sample(true);
    s.per_layer_values["early"] = {0.1, 0.9};
    CHECK_THROWS_AS(coe::build_chain(s, broken, cap, nullptr, opt), coe::Error);
  }
}

TEST_CASE("mock narrative") {
  auto db = tiny_db();
  coe::Caption cap{"a shark near a net", coe::CaptionSource::ProvidedFile};
  coe::ChainOptions opt;
  opt.alpha = 0.15;
  auto gw = coe::Gateway::mock("s", coe::mock_synthesizer());

  auto chain = coe::synthesize(coe::build_chain(tiny_sample(true), db, cap, nullptr, opt), *gw);
  CHECK(chain.narrative ==
        "The prediction is correct: the model predicted \"great white shark\" and the label is \"great white "
        "shark\". The image shows a shark near a net. In layer early the model responds to \"gray texture\" "
        "(0.90) and \"fin\" (0.30). In layer late the model responds to \"net\" (1.00) and \"shark\" (0.20). "
        "The strongest concept in the deepest layer is \"net\", which supports the prediction.");

  auto wrong = coe::synthesize(coe::build_chain(tiny_sample(false), db, cap, nullptr, opt), *gw);
  CHECK(wrong.narrative.rfind("The prediction is incorrect", 0) == 0);
  CHECK(wrong.narrative.find("pulled the decision away from the label") != std::string::npos);

  auto req = coe::render_synthesis_prompt(chain, {});
  auto block = coe::extract_block(req.all_text(), "CHAIN");
  REQUIRE(block.has_value());
  CHECK(json::parse(*block) == coe::chain_prompt_block(chain));
}

TEST_CASE("class names compare loosely") {
  CHECK(coe::same_class("Great_White shark", "great white  shark"));
  CHECK_FALSE(coe::same_class("tench", "goldfish"));
}

TEST_CASE("selection properties: scale invariance and the worked example") {
  const std::vector<double> v{0.5, 0.03, 0.0004, 0.2};
  CHECK(indices(coe::select_top_concepts(v, 0.001)) == std::vector<std::size_t>{0, 3, 1});
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0), scale(1e-3, 1e3);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> x(1 + rng() % 100);
    for (auto& e : x) e = u(rng);
    const double c = scale(rng);
    std::vector<double> cx;
    for (double e : x) cx.push_back(c * e);
    auto a = indices(coe::select_top_concepts(x, 0.05));
    auto b = indices(coe::select_top_concepts(cx, 0.05));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("filter always returns a representative of the catalog") {
  std::mt19937_64 rng(19);
  const std::vector<std::string> words{"shark", "fin", "water", "net", "green", "mesh", "gray", "fish"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::pair<std::string, std::size_t>> counts;
    std::set<std::string> used;
    for (std::size_t i = 0, k = 1 + rng() % 8; i < k; ++i) {
      auto a = words[rng() % words.size()] + (rng() % 2 ? " " + words[rng() % words.size()] : "");
      if (used.insert(a).second) counts.push_back({a, 1 + rng() % 9});
    }
    auto cat = coe::unclustered(coe::table_from_counts(counts));
    coe::Caption cap{words[rng() % words.size()] + " and " + words[rng() % words.size()], coe::CaptionSource::ProvidedFile};
    auto pick = coe::filter_atom(cat, cap, nullptr, coe::FilterMode::Mock);
    CHECK(std::any_of(cat.clusters.begin(), cat.clusters.end(), [&](const auto& c) { return c.representative == pick; }));
  }
}
