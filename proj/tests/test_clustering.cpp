#include <doctest.h>

#include <random>
#include <set>

#include "coe/error.hpp"
#include "coe/semantic_clustering.hpp"
#include "oracles.hpp"

using coe::Verdict;

namespace {

coe::Atom atom(const std::string& s) { return coe::Atom::from_normalized(s); }

void both_ways(coe::VerdictTable& t, const std::string& a, const std::string& b, Verdict v) {
  t.set(a, b, v);
  t.set(b, a, v);
}

}  // namespace

TEST_CASE("barrier/fence and entry/gate collapse into two clusters") {
  auto table = coe::table_from_counts({{"barrier", 5}, {"fence", 3}, {"entry", 2}, {"gate", 1}});
  coe::VerdictTable v;
  both_ways(v, "barrier", "fence", Verdict::Entail);
  both_ways(v, "entry", "gate", Verdict::Entail);
  for (auto policy : {coe::MergePolicy::Strict}) {
    auto cat = coe::cluster(table, policy, v);
    REQUIRE(cat.p_star() == 2);
    CHECK(cat.clusters[0].representative.text() == "barrier");
    CHECK(cat.clusters[0].count == 8);
    CHECK(cat.clusters[1].representative.text() == "entry");
    CHECK(cat.clusters[1].count == 3);
    CHECK(cat.total_raw == 11);
  }
}

TEST_CASE("reflexive pairs never reach the backend") {
  coe::VerdictTable v;
  CHECK(coe::entail(atom("shark"), atom("shark"), v) == Verdict::Entail);
  CHECK(v.calls() == 0);
}

TEST_CASE("merge policies differ on neutral pairs") {
  coe::VerdictTable v;
  // blue/yellow: neither entails the other
  CHECK_FALSE(coe::merge_decision(atom("blue"), atom("yellow"), coe::MergePolicy::Strict, v));
  CHECK(coe::merge_decision(atom("blue"), atom("yellow"), coe::MergePolicy::NoContradiction, v));

  both_ways(v, "red", "green", Verdict::Contradict);
  CHECK_FALSE(coe::merge_decision(atom("red"), atom("green"), coe::MergePolicy::NoContradiction, v));

  // one-directional entailment
  v.set("large shark", "shark", Verdict::Entail);
  CHECK_FALSE(coe::merge_decision(atom("large shark"), atom("shark"), coe::MergePolicy::Strict, v));
  CHECK(coe::merge_decision(atom("large shark"), atom("shark"), coe::MergePolicy::NoContradiction, v));

  CHECK(coe::merge_policy_from_string("strict") == coe::MergePolicy::Strict);
  CHECK(coe::to_string(coe::MergePolicy::NoContradiction) == "no-contradiction");
  CHECK_THROWS_AS(coe::merge_policy_from_string("loose"), coe::Error);
}

TEST_CASE("single-atom catalog") {
  coe::VerdictTable v;
  auto cat = coe::cluster(coe::table_from_counts({{"shark", 45}}), coe::MergePolicy::Strict, v);
  REQUIRE(cat.p_star() == 1);
  CHECK(cat.clusters[0].count == 45);
  CHECK(v.calls() == 0);
}

TEST_CASE("lexical oracle") {
  auto o = coe::LexicalOracle::from_text(
      "# comment\n"
      "fence, barrier, railing\n"
      "! blue, yellow, red\n"
      "fish, fishes\n");
  CHECK(o.judge(atom("fence"), atom("railing")) == Verdict::Entail);
  CHECK(o.judge(atom("railing"), atom("barrier")) == Verdict::Entail);
  CHECK(o.judge(atom("blue"), atom("yellow")) == Verdict::Contradict);
  CHECK(o.judge(atom("blue"), atom("green")) == Verdict::Neutral);
  CHECK(o.judge(atom("large gray shark"), atom("gray shark")) == Verdict::Entail);
  CHECK(o.judge(atom("gray shark"), atom("large gray shark")) == Verdict::Neutral);
  CHECK(o.judge(atom("fish scales"), atom("fishes")) == Verdict::Entail);

  SUBCASE("overlapping synonym lines merge groups") {
    o.add_synonyms({"barrier", "wall"});
    CHECK(o.judge(atom("wall"), atom("fence")) == Verdict::Entail);
  }
}

TEST_CASE("verdict labels") {
  CHECK(coe::verdict_from_label("Entailment.") == Verdict::Entail);
  CHECK(coe::verdict_from_label(" neutral") == Verdict::Neutral);
  CHECK(coe::verdict_from_label("CONTRADICTION") == Verdict::Contradict);
  CHECK_THROWS_AS(coe::verdict_from_label("maybe"), coe::ParseError);
}

TEST_CASE("greedy clustering matches the brute-force partition oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<std::pair<std::string, std::size_t>> counts;
    for (std::size_t i = 0; i < n; ++i) counts.push_back({"a" + std::to_string(i), 1 + rng() % 9});
    coe::VerdictTable v;
    const char labels[] = {'E', 'N', 'C'};
    std::vector<std::vector<Verdict>> m(n, std::vector<Verdict>(n, Verdict::Neutral));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        if (a == b) continue;
        auto c = labels[rng() % 3];
        m[a][b] = c == 'E' ? Verdict::Entail : c == 'N' ? Verdict::Neutral : Verdict::Contradict;
        v.set(counts[a].first, counts[b].first, m[a][b]);
      }
    for (auto policy : {coe::MergePolicy::Strict, coe::MergePolicy::NoContradiction}) {
      auto merges = [&](std::size_t r, std::size_t a) {
        if (policy == coe::MergePolicy::Strict) return m[r][a] == Verdict::Entail && m[a][r] == Verdict::Entail;
        return m[r][a] != Verdict::Contradict && m[a][r] != Verdict::Contradict;
      };
      auto expected = oracle::cluster_partition(n, merges);
      REQUIRE(expected.size() == n);
      auto cat = coe::cluster(coe::table_from_counts(counts), policy, v);
      std::size_t sum = 0;
      for (std::size_t c = 0; c < cat.p_star(); ++c) {
        sum += cat.clusters[c].count;
        for (const auto& member : cat.clusters[c].members) {
          auto idx = static_cast<std::size_t>(std::stoul(member.text().substr(1)));
          CHECK(expected[idx] == c);
        }
      }
      std::size_t raw = 0;
      for (const auto& [_, k] : counts) raw += k;
      CHECK(sum == raw);
    }
  }
}

TEST_CASE("unclustered keeps one cluster per atom") {
  auto cat = coe::unclustered(coe::table_from_counts({{"a", 2}, {"b", 1}}));
  CHECK(cat.p_star() == 2);
  CHECK(cat.total_raw == 3);
}

TEST_CASE("partition and conservation on random catalogs with the lexical oracle") {
  auto lex = coe::LexicalOracle::from_text("fence, barrier, railing\nentry, gate, door\n! red, green, blue\n");
  const std::vector<std::string> words{"fence", "barrier", "railing", "entry", "gate", "door", "red", "green",
                                       "blue", "gray", "metal", "wood"};
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::pair<std::string, std::size_t>> counts;
    std::set<std::string> used;
    const std::size_t k = 1 + rng() % 20;
    for (std::size_t i = 0; i < k; ++i) {
      std::string a = words[rng() % words.size()];
      if (rng() % 2) a += " " + words[rng() % words.size()];
      if (!used.insert(a).second) continue;
      counts.push_back({a, 1 + rng() % 10});
    }
    auto table = coe::table_from_counts(counts);
    for (auto policy : {coe::MergePolicy::Strict, coe::MergePolicy::NoContradiction}) {
      auto cat = coe::cluster(table, policy, lex);
      std::size_t sum = 0;
      std::multiset<std::string> members;
      for (const auto& c : cat.clusters) {
        sum += c.count;
        CHECK(c.members.front() == c.representative);
        for (const auto& m : c.members) members.insert(m.text());
      }
      CHECK(sum == table.total());
      CHECK(members.size() == table.p());
      for (const auto& a : table.unique_atoms) CHECK(members.count(a.text()) == 1);
      // pure function of its inputs
      auto again = coe::cluster(table, policy, lex);
      REQUIRE(again.p_star() == cat.p_star());
      for (std::size_t c = 0; c < cat.p_star(); ++c) CHECK(again.clusters[c].members == cat.clusters[c].members);
    }
  }
}
