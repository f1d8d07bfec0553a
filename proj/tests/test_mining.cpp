#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "cante/error.hpp"
#include "cante/mining.hpp"
#include "cante/random.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cante;

namespace {

std::vector<std::pair<Pattern, int>> as_pairs(const std::vector<Motif>& motifs) {
  std::vector<std::pair<Pattern, int>> out;
  for (const auto& m : motifs) out.emplace_back(m.pattern, m.support);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Pattern> random_db(Rng& rng) {
  const int n_seq = 1 + static_cast<int>(rng.uniform_int(8));
  const int alphabet = 1 + static_cast<int>(rng.uniform_int(5));
  std::vector<Pattern> db;
  for (int s = 0; s < n_seq; ++s) {
    Pattern seq;
    const int len = static_cast<int>(rng.uniform_int(11));
    for (int i = 0; i < len; ++i) seq.push_back(static_cast<int>(rng.uniform_int(alphabet)) - 2);
    db.push_back(seq);
  }
  return db;
}

ContourSequence phrase(const std::vector<int>& clusters) {
  ContourSequence c;
  Eigen::Index frame = 0;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    c.segments.push_back({clusters[i], frame, frame + 10, 0.0, 0});
    frame += 10;
    if (i > 0) c.steps.push_back(clusters[i] - clusters[i - 1]);
  }
  return c;
}

}  // namespace

TEST_CASE("worked example from a three sequence database") {
  const std::vector<Pattern> db{{1, 2, 3}, {1, 2}, {2, 3}};
  const auto got = as_pairs(mine_closed(db, {2, 1, 3}));
  const std::vector<std::pair<Pattern, int>> want{{{1, 2}, 2}, {{2}, 3}, {{2, 3}, 2}};
  CHECK(got == want);
}

TEST_CASE("degenerate databases") {
  CHECK(mine_closed(std::vector<Pattern>{}, {2, 1, 3}).empty());
  CHECK(mine_closed(std::vector<Pattern>{{1, 2}, {1, 2}}, {3, 1, 3}).empty());
  const std::vector<Pattern> same(4, Pattern{2, -1, 2, 5});
  const auto got = mine_closed(same, {4, 1, 12});
  REQUIRE(got.size() == 1);
  CHECK(got[0].pattern == Pattern{2, -1, 2, 5});
  CHECK(got[0].support == 4);
  CHECK_THROWS_AS(mine_closed(same, {1, 1, 3}), ArgumentError);
  CHECK_THROWS_AS(mine_closed(same, {2, 3, 2}), ArgumentError);
}

TEST_CASE("output order is support descending then pattern") {
  const std::vector<Pattern> db{{1, 2, 3}, {1, 2}, {2, 3}, {3, 1}};
  const auto got = mine_closed(db, {2, 1, 3});
  for (std::size_t i = 1; i < got.size(); ++i) {
    const bool ordered = got[i - 1].support > got[i].support ||
                         (got[i - 1].support == got[i].support && got[i - 1].pattern < got[i].pattern);
    CHECK(ordered);
  }
}

TEST_CASE("agreement with brute-force enumeration") {
  Rng rng(2024);
  for (int trial = 0; trial < 150; ++trial) {
    const auto db = random_db(rng);
    const int min_support = 2 + static_cast<int>(rng.uniform_int(2));
    const int len_min = 1 + static_cast<int>(rng.uniform_int(3));
    const int len_max = len_min + static_cast<int>(rng.uniform_int(6));
    const auto got = as_pairs(mine_closed(db, {min_support, len_min, len_max}));
    CHECK(got == oracle::closed_patterns(db, min_support, len_min, len_max));
  }
}

TEST_CASE("support anti-monotonicity and threshold monotonicity") {
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const auto db = random_db(rng);
    const auto low = mine_closed(db, {2, 1, 10});
    const auto high = as_pairs(mine_closed(db, {3, 1, 10}));
    const auto low_pairs = as_pairs(low);
    for (const auto& p : high) CHECK(std::find(low_pairs.begin(), low_pairs.end(), p) != low_pairs.end());
    for (const auto& m : low) {
      for (std::size_t len = 1; len < m.pattern.size(); ++len) {
        const Pattern prefix(m.pattern.begin(), m.pattern.begin() + static_cast<long>(len));
        const auto support = std::count_if(db.begin(), db.end(),
                                           [&](const Pattern& s) { return oracle::is_subsequence(s, prefix); });
        CHECK(support >= m.support);
      }
    }
  }
}

TEST_CASE("subsequence containment") {
  CHECK(contains_subsequence({2, -1, 2}, {2, 2}));
  CHECK(contains_subsequence({2, -1, 2}, {}));
  CHECK_FALSE(contains_subsequence({2, -1, 2}, {-1, -1}));
  CHECK_FALSE(contains_subsequence({}, {1}));
}

TEST_CASE("occurrence spans use left-most greedy embeddings") {
  const ContourSequence c = phrase({0, 2, 1, 3});  // steps +2 -1 +2
  const auto whole = locate_occurrences({2, -1, 2}, c);
  REQUIRE(!whole.empty());
  CHECK(whole[0] == std::pair<Eigen::Index, Eigen::Index>{0, 40});

  const auto single = locate_occurrences({2}, c);
  REQUIRE(!single.empty());
  CHECK(single[0] == std::pair<Eigen::Index, Eigen::Index>{0, 20});

  const auto skip = locate_occurrences({2, 2}, c);
  REQUIRE(skip.size() == 1);
  CHECK(skip[0] == std::pair<Eigen::Index, Eigen::Index>{0, 40});

  CHECK(locate_occurrences({-3}, c).empty());
}

TEST_CASE("dictionaries record where motifs occur") {
  SequenceDatabase a{"a", {}};
  SequenceDatabase b{"b", {}};
  for (int i = 0; i < 5; ++i) {
    auto p = phrase({0, 2, 1, 3, 3 + i % 2 + 1});
    p.source_id = "a" + std::to_string(i);
    a.sequences.push_back(p);
    auto q = phrase({10, 7, 11, 8, 12});
    q.source_id = "b" + std::to_string(i);
    b.sequences.push_back(q);
  }
  const auto dicts = build_dictionary({a, b}, {3, 3, 12});
  REQUIRE(dicts.size() == 2);
  std::set<Pattern> seen;
  for (const auto& m : dicts[0].motifs) seen.insert(m.pattern);
  CHECK(seen.count({2, -1, 2}) == 1);
  for (const auto& m : dicts[1].motifs) CHECK(seen.count(m.pattern) == 0);

  for (const auto& dict : dicts) {
    const SequenceDatabase& db = dict.singer == "a" ? a : b;
    for (const auto& m : dict.motifs) {
      CHECK(static_cast<int>(m.occurrences.size()) == m.support);
      for (const auto& occ : m.occurrences) {
        const auto it = std::find_if(db.sequences.begin(), db.sequences.end(),
                                     [&](const ContourSequence& s) { return s.source_id == occ.source_id; });
        REQUIRE(it != db.sequences.end());
        Pattern covered;
        for (std::size_t j = 0; j + 1 < it->segments.size(); ++j) {
          if (it->segments[j].start_frame >= occ.start_frame && it->segments[j + 1].end_frame <= occ.end_frame) {
            covered.push_back(it->steps[j]);
          }
        }
        CHECK(contains_subsequence(covered, m.pattern));
      }
    }
  }

  testutil::TempDir dir("mining");
  save_dictionary_json(dir / "a.json", dicts[0]);
  const auto back = load_dictionary_json(dir / "a.json");
  CHECK(back.singer == "a");
  REQUIRE(back.motifs.size() == dicts[0].motifs.size());
  CHECK(back.motifs[0].pattern == dicts[0].motifs[0].pattern);
  CHECK(back.motifs[0].occurrences == dicts[0].motifs[0].occurrences);
}

TEST_CASE("a singer without sequences yields an empty dictionary") {
  const auto dicts = build_dictionary({SequenceDatabase{"quiet", {}}}, {2, 1, 3});
  REQUIRE(dicts.size() == 1);
  CHECK(dicts[0].motifs.empty());
}
