#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fgb/attn_select.hpp"
#include "testing.hpp"

using namespace fgb;
using namespace fgb::attnsel;

namespace {

// hand-set single-head trace builder: maps[k][q][j]
AttentionTrace trace_from(const std::vector<std::vector<std::vector<double>>>& maps) {
  AttentionTrace t;
  const int layers = static_cast<int>(maps.size());
  const int s = static_cast<int>(maps[0].size());
  t.resize(layers, 1, s);
  for (int k = 0; k < layers; ++k)
    for (int q = 0; q < s; ++q)
      for (int j = 0; j < s; ++j) t.a[t.offset(k, 0, q) + j] = maps[k][q][j];
  return t;
}

AttentionTrace uniform_trace(int layers, int s) {
  AttentionTrace t;
  t.resize(layers, 1, s);
  for (auto& v : t.a) v = 1.0 / s;
  return t;
}

AttentionTrace random_trace(int layers, int heads, int s, Rng& rng) {
  AttentionTrace t;
  t.resize(layers, heads, s);
  for (int k = 0; k < layers; ++k)
    for (int h = 0; h < heads; ++h)
      for (int q = 0; q < s; ++q) {
        double total = 0.0;
        std::vector<double> row(s);
        for (auto& v : row) {
          v = rng.uniform(0.01, 1.0);
          total += v;
        }
        for (int j = 0; j < s; ++j) t.a[t.offset(k, h, q) + j] = row[j] / total;
      }
  return t;
}

Vocabulary vocab_of(std::vector<int> ids) {
  ids.push_back(kClsToken);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Vocabulary v;
  v.ids = std::move(ids);
  return v;
}

}  // namespace

TEST_CASE("self importance: uniform attention gives 1/s") {
  AttentionTrace t = uniform_trace(2, 3);
  CHECK(self_importance(t, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("self importance: direct read-off of the final-layer trace") {
  AttentionTrace t = trace_from({
      {{1, 0, 0}, {0.5, 0.5, 0}, {0, 0, 1}},
      {{1, 0, 0}, {0.4, 0.5, 0.1}, {0.9, 0.05, 0.05}},
  });
  CHECK(self_importance(t, 1) == doctest::Approx(0.4));
}

TEST_CASE("self importance: full product multiplies the lower-layer diagonals") {
  AttentionTrace t = trace_from({
      {{1, 0, 0}, {0.2, 0.5, 0.3}, {0, 0, 1}},
      {{1, 0, 0}, {0.4, 0.5, 0.1}, {0.9, 0.05, 0.05}},
  });
  const double approx = self_importance(t, 1);
  const double full = self_importance(t, 1, true);
  CHECK(approx == doctest::Approx(0.4));
  CHECK(full == doctest::Approx(0.5 * 0.4));
  // products of probabilities never exceed the shipped approximation
  CHECK(full <= approx + 1e-15);
}

TEST_CASE("rest importance: hand-traced greedy path") {
  // layer-1 attention from position 1 (0-based) = [0.1, 0.2, 0.7]:
  // candidates j != 1 are {0, 2}, max 0.7 at j = 2; layer-2 a(2 -> cls) = 0.5
  AttentionTrace t = trace_from({
      {{1, 0, 0}, {0.1, 0.2, 0.7}, {0, 0, 1}},
      {{1, 0, 0}, {0.3, 0.3, 0.4}, {0.5, 0.25, 0.25}},
  });
  CHECK(rest_importance(t, 1) == doctest::Approx(0.7 * 0.5));
}

TEST_CASE("rest importance: uniform attention gives (1/s)^L") {
  AttentionTrace t = uniform_trace(2, 3);
  CHECK(rest_importance(t, 1) == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("rest importance stays within [0, 1] on random traces") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int layers = 2 + static_cast<int>(rng.uniform_index(3));
    const int s = 2 + static_cast<int>(rng.uniform_index(5));
    AttentionTrace t = random_trace(layers, 2, s, rng);
    for (int p = 1; p < s; ++p) {
      const double r = rest_importance(t, p);
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
      const double si = self_importance(t, p);
      CHECK(si >= 0.0);
      CHECK(si <= 1.0);
    }
  }
}

TEST_CASE("rest importance rejects single-layer and lone-token traces") {
  AttentionTrace one_layer = uniform_trace(1, 3);
  CHECK_THROWS_AS(rest_importance(one_layer, 1), Error);
  AttentionTrace lone = uniform_trace(2, 1);
  CHECK_THROWS_AS(rest_importance(lone, 0), Error);
}

TEST_CASE("aggregate_vocab: two occurrences sum their contributions") {
  // token 7 occurs at position 1 in both sequences; hand values pinned by
  // constructing traces whose self and rest parts are known
  AttentionTrace t1 = trace_from({
      {{1, 0}, {0.9, 0.1}},
      {{1, 0}, {0.1, 0.9}},
  });
  // self = a(1, cls; last) = 0.1; rest: max over j != 1 at layer 0 from
  // p0 = 1 -> j = 0 value 0.9, then a(0, cls; last) = 1 -> 0.9
  AttentionTrace t2 = trace_from({
      {{1, 0}, {0.6, 0.4}},
      {{1, 0}, {0.3, 0.7}},
  });
  // self = 0.3; rest = 0.6 * 1 = 0.6
  const std::vector<std::vector<int>> seqs{{kClsToken, 7}, {kClsToken, 7}};
  TokenImportance scores = aggregate_vocab(seqs, {t1, t2});
  REQUIRE(scores.count(7));
  CHECK(scores.at(7) == doctest::Approx((0.1 + 0.9) + (0.3 + 0.6)));
  CHECK(scores.count(kClsToken) == 0);
}

TEST_CASE("aggregate_vocab: hand-enumerated two-sequence corpus") {
  AttentionTrace t1 = trace_from({
      {{1, 0, 0}, {0.1, 0.2, 0.7}, {0.3, 0.3, 0.4}},
      {{1, 0, 0}, {0.4, 0.5, 0.1}, {0.5, 0.25, 0.25}},
  });
  AttentionTrace t2 = trace_from({
      {{1, 0}, {0.8, 0.2}},
      {{1, 0}, {0.35, 0.65}},
  });
  const std::vector<std::vector<int>> seqs{{kClsToken, 5, 9}, {kClsToken, 9}};
  TokenImportance scores = aggregate_vocab(seqs, {t1, t2});
  // sequence 1, position 1 (token 5): self 0.4; rest max(0.7 over j!=1) ->
  // j=2, then a(2, cls; last) = 0.5 -> 0.35; total 0.75
  // sequence 1, position 2 (token 9): self 0.5; rest max over j!=2 of
  // layer-0 row 2 = 0.3 at j=0 (tie to lower), a(0, cls; last) = 1 -> 0.3
  // sequence 2, position 1 (token 9): self 0.35; rest 0.8 * 1.0 = 0.8
  CHECK(scores.at(5) == doctest::Approx(0.4 + 0.35));
  CHECK(scores.at(9) == doctest::Approx((0.5 + 0.3) + (0.35 + 0.8)));
}

TEST_CASE("prune_vocab: sigma = 1 keeps the vocabulary") {
  Vocabulary v = vocab_of({3, 5, 9});
  TokenImportance scores{{3, 1.0}, {5, 0.5}};
  Vocabulary out = prune_vocab(scores, v, 1.0);
  CHECK(out.ids == v.ids);
  CHECK(out.round == v.round + 1);
}

TEST_CASE("prune_vocab: top-1 selection keeps the best-scored token") {
  Vocabulary v = vocab_of({10, 20});
  TokenImportance scores{{10, 2.0}, {20, 1.0}};
  Vocabulary out = prune_vocab(scores, v, 0.5);
  CHECK(out.ids == std::vector<int>{kClsToken, 10});
}

TEST_CASE("prune_vocab: ceiling arithmetic on a 10-token vocabulary") {
  std::vector<int> ids;
  TokenImportance scores;
  for (int i = 1; i <= 10; ++i) {
    ids.push_back(i);
    scores[i] = static_cast<double>(i);
  }
  Vocabulary v = vocab_of(ids);
  Vocabulary out = prune_vocab(scores, v, 0.8);
  CHECK(out.content_size() == 8);
  CHECK(out.contains(kClsToken));
  CHECK(!out.contains(1));
  CHECK(!out.contains(2));
}

TEST_CASE("prune_vocab: ties break toward the lower token id") {
  Vocabulary v = vocab_of({4, 7, 9});
  TokenImportance scores{{4, 1.0}, {7, 1.0}, {9, 1.0}};
  Vocabulary out = prune_vocab(scores, v, 0.34);  // ceil(1.02) = 2 kept...
  CHECK(out.content_size() == 2);
  CHECK(out.contains(4));
  CHECK(out.contains(7));
  CHECK(!out.contains(9));
}

TEST_CASE("prune_vocab: nested vocabularies stay monotone") {
  Rng rng(41);
  std::vector<int> ids;
  for (int i = 1; i <= 50; ++i) ids.push_back(i);
  Vocabulary v = vocab_of(ids);
  for (int round = 0; round < 5; ++round) {
    TokenImportance scores;
    for (int id : v.ids)
      if (id != kClsToken) scores[id] = rng.uniform();
    Vocabulary next = prune_vocab(scores, v, 0.7);
    for (int id : next.ids) CHECK(v.contains(id));
    CHECK(next.contains(kClsToken));
    v = next;
  }
}

TEST_CASE("rewrite_sequence: all tokens in vocabulary leaves it unchanged") {
  Vocabulary v = vocab_of({1, 2, 3});
  std::vector<int> seq{kClsToken, 1, 3, 2, 2};
  CHECK(rewrite_sequence(seq, v) == seq);
}

TEST_CASE("rewrite_sequence: order-preserving filter") {
  Vocabulary v = vocab_of({1});
  std::vector<int> seq{kClsToken, 1, 2, 1};
  CHECK(rewrite_sequence(seq, v) == std::vector<int>{kClsToken, 1, 1});
}

TEST_CASE("rewrite_sequence: reduction to the lone classification token") {
  Vocabulary v = vocab_of({});
  std::vector<int> seq{kClsToken, 5, 6};
  CHECK(rewrite_sequence(seq, v) == std::vector<int>{kClsToken});
}

TEST_CASE("rewrite_sequence is idempotent on random inputs") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ids;
    for (int i = 1; i <= 20; ++i)
      if (rng.uniform() < 0.5) ids.push_back(i);
    Vocabulary v = vocab_of(ids);
    std::vector<int> seq{kClsToken};
    const int len = static_cast<int>(rng.uniform_index(15));
    for (int i = 0; i < len; ++i)
      seq.push_back(1 + static_cast<int>(rng.uniform_index(20)));
    const auto once = rewrite_sequence(seq, v);
    const auto twice = rewrite_sequence(once, v);
    CHECK(once == twice);
    CHECK(once.front() == kClsToken);
  }
}

TEST_CASE("vocabulary from a dataset collects occurring tokens") {
  LabeledDataset data;
  data.modality = Modality::Sequence;
  data.classes = 2;
  data.samples.emplace_back(std::vector<int>{kClsToken, 5, 2});
  data.samples.emplace_back(std::vector<int>{kClsToken, 2, 9});
  data.labels = {0, 1};
  Vocabulary v = Vocabulary::from_dataset(data);
  CHECK(v.ids == std::vector<int>{kClsToken, 2, 5, 9});
  CHECK(v.content_size() == 3);
}
