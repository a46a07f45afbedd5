#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <iostream>

#include "fgb/learners.hpp"
#include "testing.hpp"

using namespace fgb;
using namespace fgb::learners;

namespace {

std::vector<Sample> random_images(int n, std::size_t h, std::size_t w,
                                  uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(h * w);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    out.emplace_back(Tensor({1, h, w}, std::move(v)));
  }
  return out;
}

Matrix random_targets(int n, int m, uint64_t seed) {
  Rng rng(seed);
  Matrix t(n, m, 0.0);
  for (auto& v : t.a) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<Sample> random_sequences(int n, int vocab, int max_len,
                                     uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> seq{kClsToken};
    const int len = 3 + static_cast<int>(rng.uniform_index(max_len - 3));
    for (int t = 0; t < len; ++t)
      seq.push_back(1 + static_cast<int>(rng.uniform_index(vocab - 1)));
    out.emplace_back(std::move(seq));
  }
  return out;
}

CnnConfig small_cnn_config(int classes = 2) {
  CnnConfig cfg;
  cfg.in_channels = 1;
  cfg.channels = {4, 8};
  cfg.classes = classes;
  return cfg;
}

TransformerConfig small_tf_config(int vocab = 30, int classes = 2) {
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_model = 16;
  cfg.ffn_hidden = 32;
  cfg.vocab_size = vocab;
  cfg.max_len = 24;
  cfg.classes = classes;
  return cfg;
}

}  // namespace

TEST_CASE("cnn head width follows the conv/pool arithmetic") {
  CnnConfig cfg = small_cnn_config();
  CHECK(head_input_width(cfg, 8, 8) == 8u * 2 * 2);
  CHECK(head_input_width(cfg, 6, 6) == 8u * 1 * 1);
  // below the minimum receptive extent
  CHECK_THROWS_AS(head_input_width(cfg, 3, 8), Error);
}

TEST_CASE("subgrid head is strictly narrower than the full-grid head") {
  CnnConfig cfg;
  cfg.in_channels = 1;
  cfg.classes = 3;
  const std::size_t full = head_input_width(cfg, 8, 8);
  const std::size_t sub = head_input_width(cfg, 6, 6);
  CHECK(sub < full);
}

TEST_CASE("train_to_weights: zero epochs leaves parameters unchanged") {
  CnnConfig cfg = small_cnn_config();
  auto model = CnnWeakLearner::fresh(cfg, 6, 6, 5);
  std::vector<double> before(model.params().get("head.w").values().begin(),
                             model.params().get("head.w").values().end());
  auto inputs = random_images(4, 6, 6, 9);
  Matrix targets = random_targets(4, 2, 10);
  TrainConfig tc;
  tc.epochs = 0;
  const double loss0 = train_to_weights(model, inputs, targets, {}, tc);
  CHECK(loss0 > 0.0);
  auto after = model.params().get("head.w").values();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("train_to_weights: loss after training never exceeds the initial loss") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    CnnConfig cfg = small_cnn_config();
    auto model = CnnWeakLearner::fresh(cfg, 6, 6, seed);
    auto inputs = random_images(12, 6, 6, seed + 100);
    Matrix targets = random_targets(12, 2, seed + 200);
    TrainConfig tc;
    tc.epochs = 0;
    const double initial = train_to_weights(model, inputs, targets, {}, tc);
    tc.epochs = 8;
    tc.batch_size = 4;
    tc.adam.lr = 5e-3;
    tc.seed = seed;
    const double trained = train_to_weights(model, inputs, targets, {}, tc);
    CHECK(trained <= initial);
  }
}

TEST_CASE("train_to_weights: a single sample is fit nearly exactly") {
  CnnConfig cfg = small_cnn_config();
  auto model = CnnWeakLearner::fresh(cfg, 6, 6, 3);
  auto inputs = random_images(1, 6, 6, 4);
  Matrix targets = random_targets(1, 2, 5);
  TrainConfig tc;
  tc.epochs = 220;
  tc.batch_size = 1;
  tc.adam.lr = 1e-2;
  tc.seed = 6;
  const double final_loss = train_to_weights(model, inputs, targets, {}, tc);
  CHECK(final_loss < 1e-3);
}

TEST_CASE("train_to_weights: seeded training is deterministic end to end") {
  auto run = [] {
    CnnConfig cfg = small_cnn_config();
    auto model = CnnWeakLearner::fresh(cfg, 6, 6, 11);
    auto inputs = random_images(10, 6, 6, 12);
    Matrix targets = random_targets(10, 2, 13);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 14;
    train_to_weights(model, inputs, targets, {}, tc);
    return std::vector<double>(model.params().get("head.w").values().begin(),
                               model.params().get("head.w").values().end());
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("square-loss gradient vanishes at a perfect fit") {
  CnnConfig cfg = small_cnn_config();
  auto model = CnnWeakLearner::fresh(cfg, 6, 6, 21);
  auto inputs = random_images(1, 6, 6, 22);
  // target = the model's own output: gradient of ||g - w||^2 must be zero
  Tensor out = model.forward_train(inputs[0]);
  Matrix targets(1, 2, 0.0);
  targets.at(0, 0) = out.value_at(0);
  targets.at(0, 1) = out.value_at(1);
  model.params().zero_grad();
  Tensor target_t({2}, {targets.at(0, 0), targets.at(0, 1)});
  Tensor diff = model.forward_train(inputs[0]) - target_t;
  backward(sum_all(diff * diff));
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    if (!model.params().at(p).has_grad()) continue;
    for (double g : model.params().at(p).grad()) CHECK(std::fabs(g) <= 1e-12);
  }
}

TEST_CASE("unit loss scales reduce to the plain square loss") {
  CnnConfig cfg = small_cnn_config();
  auto inputs = random_images(6, 6, 6, 31);
  Matrix targets = random_targets(6, 2, 32);
  std::vector<double> unit(6, 1.0);
  auto ma = CnnWeakLearner::fresh(cfg, 6, 6, 33);
  auto mb = CnnWeakLearner::fresh(cfg, 6, 6, 33);
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 3;
  tc.seed = 34;
  const double la = train_to_weights(ma, inputs, targets, {}, tc);
  const double lb = train_to_weights(mb, inputs, targets, unit, tc);
  CHECK(la == lb);
  auto va = ma.params().get("head.w").values();
  auto vb = mb.params().get("head.w").values();
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
}

TEST_CASE("training aborts with the epoch and batch index on divergence") {
  CnnConfig cfg = small_cnn_config();
  auto model = CnnWeakLearner::fresh(cfg, 6, 6, 41);
  auto inputs = random_images(4, 6, 6, 42);
  Matrix targets = random_targets(4, 2, 43);
  targets.at(1, 0) = std::nan("");
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  try {
    train_to_weights(model, inputs, targets, {}, tc);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("transfer_extractor: mutating the copy leaves the source intact") {
  CnnConfig cfg = small_cnn_config();
  auto src = CnnWeakLearner::fresh(cfg, 8, 8, 51);
  ParamStore copy = transfer_extractor(src);
  const double orig = src.params().get("conv0.w").value_at(0);
  copy.get("conv0.w").values_mut()[0] = orig + 5.0;
  CHECK(src.params().get("conv0.w").value_at(0) == orig);
}

TEST_CASE("transfer_extractor to a different grid keeps forwards well-formed") {
  CnnConfig cfg = small_cnn_config();
  auto src = CnnWeakLearner::fresh(cfg, 8, 8, 52);
  auto next = CnnWeakLearner::from_extractor(transfer_extractor(src), cfg, 6, 6, 53);
  auto imgs = random_images(1, 6, 6, 54);
  auto scores = next.score(imgs[0]);
  CHECK(scores.size() == 2);
}

TEST_CASE("transferred extractor produces bit-identical features before training") {
  CnnConfig cfg = small_cnn_config();
  auto src = CnnWeakLearner::fresh(cfg, 8, 8, 55);
  auto next = CnnWeakLearner::from_extractor(transfer_extractor(src), cfg, 8, 8, 56);
  auto imgs = random_images(1, 8, 8, 57);
  NoGradGuard ng;
  Tensor fa = src.forward_features(std::get<Tensor>(imgs[0]));
  Tensor fb = next.forward_features(std::get<Tensor>(imgs[0]));
  REQUIRE(fa.numel() == fb.numel());
  for (std::size_t i = 0; i < fa.numel(); ++i)
    CHECK(fa.value_at(i) == fb.value_at(i));
}

TEST_CASE("new heads are deterministic under the seed") {
  CnnConfig cfg = small_cnn_config();
  auto a = CnnWeakLearner::fresh(cfg, 8, 8, 61);
  auto b = CnnWeakLearner::fresh(cfg, 8, 8, 61);
  auto va = a.params().get("head.w").values();
  auto vb = b.params().get("head.w").values();
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
}

TEST_CASE("transformer: warm-start copy is bit-identical and independent") {
  TransformerConfig cfg = small_tf_config();
  auto src = TransformerWeakLearner::fresh(cfg, 71);
  auto copy = transfer_transformer(src);
  auto seqs = random_sequences(1, cfg.vocab_size, 12, 72);
  auto sa = src.score(seqs[0]);
  auto sb = copy.score(seqs[0]);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] == sb[i]);

  // training the copy must leave the source untouched
  std::vector<double> before(src.params().get("tok_emb").values().begin(),
                             src.params().get("tok_emb").values().end());
  auto inputs = random_sequences(6, cfg.vocab_size, 12, 73);
  Matrix targets = random_targets(6, 2, 74);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.seed = 75;
  tc.adam.lr = 1e-3;
  train_to_weights(copy, inputs, targets, {}, tc);
  auto after = src.params().get("tok_emb").values();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
  auto changed = copy.params().get("tok_emb").values();
  bool any_change = false;
  for (std::size_t i = 0; i < before.size(); ++i)
    if (changed[i] != before[i]) any_change = true;
  CHECK(any_change);
}

TEST_CASE("transformer: config mismatch is rejected on warm start") {
  auto a = TransformerWeakLearner::fresh(small_tf_config(30), 81);
  auto b = TransformerWeakLearner::fresh(small_tf_config(40), 82);
  CHECK_THROWS_AS(b.copy_parameters_from(a), Error);
}

TEST_CASE("transformer: warm start does not hurt the initial round-t loss (reported)") {
  // paired comparison over 3 seeds; informative, not hard-asserted
  TransformerConfig cfg = small_tf_config();
  int warm_wins = 0;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    auto inputs = random_sequences(10, cfg.vocab_size, 12, 900 + seed);
    Matrix t0 = random_targets(10, 2, 910 + seed);
    auto base = TransformerWeakLearner::fresh(cfg, 920 + seed);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 930 + seed;
    tc.adam.lr = 1e-3;
    train_to_weights(base, inputs, t0, {}, tc);

    Matrix t1 = random_targets(10, 2, 940 + seed);
    auto warm = transfer_transformer(base);
    auto cold = TransformerWeakLearner::fresh(cfg, 950 + seed);
    TrainConfig eval;
    eval.epochs = 0;
    const double warm_loss = train_to_weights(warm, inputs, t1, {}, eval);
    const double cold_loss = train_to_weights(cold, inputs, t1, {}, eval);
    if (warm_loss <= cold_loss) ++warm_wins;
  }
  std::cout << "warm start had lower or equal initial loss on " << warm_wins
            << "/3 seeds\n";
  CHECK(warm_wins >= 0);  // reported, not asserted
}

TEST_CASE("transformer trains to targets on sequences") {
  TransformerConfig cfg = small_tf_config();
  auto model = TransformerWeakLearner::fresh(cfg, 91);
  auto inputs = random_sequences(8, cfg.vocab_size, 10, 92);
  Matrix targets = random_targets(8, 2, 93);
  TrainConfig tc;
  tc.epochs = 0;
  const double initial = train_to_weights(model, inputs, targets, {}, tc);
  tc.epochs = 6;
  tc.batch_size = 4;
  tc.adam.lr = 2e-3;
  tc.seed = 94;
  tc.warmup_ratio = 0.06;
  const double trained = train_to_weights(model, inputs, targets, {}, tc);
  CHECK(trained < initial);
}

TEST_CASE("encoder rejects malformed sequences") {
  TransformerConfig cfg = small_tf_config();
  auto model = TransformerWeakLearner::fresh(cfg, 95);
  CHECK_THROWS_AS(model.forward({}, nullptr), Error);
  CHECK_THROWS_AS(model.forward({5, 1, 2}, nullptr), Error);   // no cls prefix
  CHECK_THROWS_AS(model.forward({kClsToken, cfg.vocab_size}, nullptr), Error);
}

TEST_CASE("encoder with zeroed positional embeddings is permutation invariant") {
  TransformerConfig cfg = small_tf_config();
  auto model = TransformerWeakLearner::fresh(cfg, 96);
  auto& pos = model.params().get("pos_emb");
  std::fill(pos.values_mut().begin(), pos.values_mut().end(), 0.0);
  std::vector<int> seq{kClsToken, 4, 9, 2, 17, 9};
  std::vector<int> perm{kClsToken, 9, 17, 2, 9, 4};
  auto a = model.score(seq);
  auto b = model.score(perm);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("single-layer single-head attention matches a hand computation") {
  // one layer, one head, width 2, two positions; weights chosen so the
  // attention logits are easy to carry through by hand
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.d_model = 2;
  cfg.ffn_hidden = 2;
  cfg.vocab_size = 3;
  cfg.max_len = 4;
  cfg.classes = 2;
  auto model = TransformerWeakLearner::fresh(cfg, 97);
  auto& p = model.params();
  auto set = [&](const std::string& name, std::vector<double> v) {
    auto dst = p.get(name).values_mut();
    REQUIRE(dst.size() == v.size());
    std::copy(v.begin(), v.end(), dst.begin());
  };
  // embeddings: token 1 -> (1, 0), token 2 -> (0, 1); cls -> (1, 1)
  set("tok_emb", {1, 1, 1, 0, 0, 1});
  set("pos_emb", {0, 0, 0, 0, 0, 0, 0, 0});
  set("layer0.attn.wq", {1, 0, 0, 1});
  set("layer0.attn.bq", {0, 0});
  set("layer0.attn.wk", {1, 0, 0, 1});
  set("layer0.attn.bk", {0, 0});
  set("layer0.attn.wv", {1, 0, 0, 1});
  set("layer0.attn.bv", {0, 0});
  set("layer0.attn.wo", {1, 0, 0, 1});
  set("layer0.attn.bo", {0, 0});

  std::vector<int> seq{kClsToken, 1};
  AttentionTrace trace = model.trace_of(seq);
  // x = [(1,1), (1,0)]; q = k = x; scores/sqrt(1):
  // row cls: [ (1,1).(1,1), (1,1).(1,0) ] / sqrt(2)... head dim = 2 so the
  // scale is 1/sqrt(2): scores = [2, 1] / sqrt(2)
  const double s0 = 2.0 / std::sqrt(2.0);
  const double s1 = 1.0 / std::sqrt(2.0);
  const double e0 = std::exp(s0), e1 = std::exp(s1);
  CHECK(trace.at(0, 0, 0, 0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(trace.at(0, 0, 0, 1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));
  // row for position 1: q = (1,0): scores = [(1,0).(1,1), (1,0).(1,0)]/sqrt(2)
  const double t0 = 1.0 / std::sqrt(2.0);
  const double t1 = 1.0 / std::sqrt(2.0);
  const double f0 = std::exp(t0), f1 = std::exp(t1);
  CHECK(trace.at(0, 0, 1, 0) == doctest::Approx(f0 / (f0 + f1)).epsilon(1e-12));
  CHECK(trace.at(0, 0, 1, 1) == doctest::Approx(f1 / (f0 + f1)).epsilon(1e-12));
}
