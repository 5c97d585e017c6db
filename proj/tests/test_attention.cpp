#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace cam2;
using cam2::test::toy_model;

namespace {

std::size_t argmax(const std::vector<double>& v, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)) - v.begin());
}

}  // namespace

TEST(ScoreVector, ZeroAndOneHot) {
  RowMatrix<double> F = RowMatrix<double>::Zero(5, 3);
  Vector<double> w = Vector<double>::Zero(3);
  F(2, 1) = 1.0;
  for (double x : score_vector(F, w)) EXPECT_EQ(x, 0.0);
  w[1] = 0.7;
  const auto v = score_vector(F, w);
  EXPECT_EQ(v, (std::vector<double>{0, 0, 0.7, 0, 0}));
  EXPECT_THROW(score_vector(F, Vector<double>::Zero(2)), ConfigError);
}

TEST(ScoreVector, MatchesDoubleLoop) {
  Rng rng(4);
  RowMatrix<float> F(9, 6);
  Vector<float> w(6);
  for (Eigen::Index i = 0; i < F.size(); ++i) F.data()[i] = static_cast<float>(rng.uniform(0, 2));
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = static_cast<float>(rng.uniform(-1, 1));
  const auto v = score_vector(F, w);
  for (Eigen::Index p = 0; p < F.rows(); ++p) {
    double s = 0;
    for (Eigen::Index i = 0; i < F.cols(); ++i) s += static_cast<double>(F(p, i)) * w[i];
    EXPECT_NEAR(v[static_cast<std::size_t>(p)], s, 1e-6);
  }
}

TEST(WordScores, HandExample) {
  EXPECT_EQ(word_scores({1, 2, 3, 4, 5, 6, 7}, 3, 5), (std::vector<double>{2, 3, 4, 5, 6}));
}

TEST(WordScores, ConstantAndHeightOne) {
  for (double x : word_scores(std::vector<double>(9, 1.5), 4, 6)) EXPECT_DOUBLE_EQ(x, 1.5);
  const std::vector<double> v{3, -1, 4, 1, -5};
  EXPECT_EQ(word_scores(v, 1, 5), v);
  EXPECT_THROW(word_scores(v, 2, 5), ConfigError);
  EXPECT_THROW(word_scores(v, 0, 5), ConfigError);
}

TEST(WordScores, MatchesBruteForceOracle) {
  Rng rng(11);
  for (int t = 0; t < 300; ++t) {
    const std::size_t d = 1 + rng.below(20), h = 1 + rng.below(6);
    std::vector<double> v(d + h - 1);
    for (auto& x : v) x = rng.uniform(-3, 3);
    const auto s = word_scores(v, h, d);
    const auto o = test::word_scores_oracle(v, h, d);
    for (std::size_t p = 0; p < d; ++p) EXPECT_NEAR(s[p], o[p], 1e-9);
  }
}

// sum_p s[p] = (1/h) sum_q c(q) v[q], c(q) = number of word windows holding q.
// Integer multiples of h keep both sides exact in floating point.
TEST(WordScores, WindowCountMassLaw) {
  Rng rng(12);
  for (int t = 0; t < 300; ++t) {
    const std::size_t d = 1 + rng.below(20), h = 1 + rng.below(6);
    std::vector<double> v(d + h - 1);
    for (auto& x : v) x = static_cast<double>(h) * (static_cast<double>(rng.below(21)) - 10.0);
    double rhs = 0.0;
    for (std::size_t q = 0; q < v.size(); ++q) {
      std::size_t c = 0;
      for (std::size_t p = 0; p < d; ++p) c += (p <= q && q <= p + h - 1);
      rhs += static_cast<double>(c) * v[q];
    }
    rhs /= static_cast<double>(h);
    const auto s = word_scores(v, h, d);
    EXPECT_EQ(std::accumulate(s.begin(), s.end(), 0.0), rhs);
  }
}

TEST(Cam2, ZeroClassWeightsGiveZeroScores) {
  auto m = toy_model<double>(20, 4, 6, {3}, 4, 1);
  m.params.fc_weight.row(1).setZero();
  const auto tr = forward(m, std::vector<TokenId>{1, 2, 3});
  const auto r = cam2_scores(tr, m, 1);
  ASSERT_EQ(r.raw.size(), 6u);
  for (double x : r.raw) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(r.real_words, 3u);
  EXPECT_TRUE(r.is_pad(3));
  EXPECT_THROW(cam2_scores(tr, m, 2), ConfigError);
  Rng rng(1);
  EXPECT_THROW(cam2_scores(forward(m, std::vector<TokenId>{1}, rng, 0.5), m, 0), ConfigError);
}

TEST(Cam2, PoolingIdentityHolds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto md = toy_model<double>(40, 6, 12, {2, 3, 5}, 5, seed);
    const auto mf = toy_model<float>(40, 6, 12, {2, 3, 5}, 5, seed);
    const auto ids = test::random_ids(rng, 40, 1 + rng.below(12));
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_LE(std::abs(pooling_identity_residual(forward(md, ids), md, c)), 1e-10);
      EXPECT_LE(std::abs(pooling_identity_residual(forward(mf, ids), mf, c)), 1e-5);
    }
  }
}

TEST(Cam2, RaisingAFeatureWithPositiveWeightNeverLowersScores) {
  const auto m = toy_model<double>(30, 5, 8, {2, 3}, 4, 3);
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    auto tr = forward(m, test::random_ids(rng, 30, 1 + rng.below(8)));
    const std::size_t c = rng.below(2);
    const auto before = cam2_scores(tr, m, c).raw;
    const std::size_t l = rng.below(2);
    const auto nf = static_cast<Eigen::Index>(m.hyper.filters);
    Eigen::Index i = static_cast<Eigen::Index>(rng.below(m.hyper.filters));
    if (m.params.fc_weight(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(l) * nf + i) <= 0) continue;
    const auto q = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(tr.maps[l].rows())));
    tr.maps[l](q, i) += rng.uniform(0.1, 1.0);
    const auto after = cam2_scores(tr, m, c).raw;
    bool strictly = false;
    for (std::size_t p = 0; p < before.size(); ++p) {
      EXPECT_GE(after[p], before[p]);
      strictly = strictly || after[p] > before[p];
    }
    EXPECT_TRUE(strictly);
  }
}

TEST(Normalize, ShiftByMin) {
  const auto n = normalize({1, 2, 3}, 3);
  EXPECT_DOUBLE_EQ(n[0], 0.0);
  EXPECT_DOUBLE_EQ(n[1], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(n[2], 2.0 / 3.0);
  for (double x : normalize({4, 4, 4, 4}, 4)) EXPECT_DOUBLE_EQ(x, 0.25);
  const auto padded = normalize({1, 3, -7, 9}, 2);
  EXPECT_EQ(padded[2], 0.0);
  EXPECT_EQ(padded[3], 0.0);
  EXPECT_DOUBLE_EQ(padded[1], 1.0);
  EXPECT_THROW(normalize({1, 2}, 0), DataError);
}

TEST(Normalize, ScaleAndShiftInvariant) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(15);
    std::vector<double> raw(n + rng.below(4));
    for (auto& x : raw) x = rng.uniform(-2, 2);
    const double a = rng.uniform(0.1, 10), b = rng.uniform(-5, 5);
    std::vector<double> moved(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) moved[i] = a * raw[i] + b;
    const auto x = normalize(raw, n), y = normalize(moved, n);
    double sum = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      EXPECT_NEAR(x[i], y[i], 1e-9);
      sum += x[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(argmax(x, n), argmax(raw, n));
    EXPECT_EQ(select_extreme(raw, n, 0.3, Direction::Top), select_extreme(moved, n, 0.3, Direction::Top));
  }
}

TEST(Select, CeilingCounts) {
  std::vector<double> inc(10);
  std::iota(inc.begin(), inc.end(), 0.0);
  EXPECT_EQ(select_extreme(inc, 10, 0.10, Direction::Top), std::vector<std::size_t>{9});
  EXPECT_EQ(select_extreme(inc, 10, 0.10, Direction::Bottom), std::vector<std::size_t>{0});
  EXPECT_EQ(select_extreme(inc, 10, 0.2, Direction::Top).size(), 2u);
  EXPECT_EQ(select_extreme(inc, 6, 0.10, Direction::Top).size(), 1u);
  EXPECT_EQ(select_extreme(inc, 11, 0.10, Direction::Top).size(), 2u);
  EXPECT_EQ(select_extreme(std::vector<double>(5, 1.0), 5, 0.4, Direction::Top), (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(select_extreme(inc, 0, 0.1, Direction::Top).empty());
  EXPECT_THROW(select_extreme(inc, 10, 0.0, Direction::Top), ConfigError);
  EXPECT_THROW(select_extreme(inc, 10, 1.5, Direction::Top), ConfigError);
}

TEST(Attend, NormalizedContractAndJson) {
  const auto m = toy_model<float>(30, 5, 10, {2, 3}, 4, 9);
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto ids = test::random_ids(rng, 30, 1 + rng.below(10));
    std::vector<std::string> words;
    for (auto id : ids) words.push_back("w" + std::to_string(id));
    const auto r = attend(m, ids, words);
    EXPECT_EQ(r.target_class, r.predicted_class);
    double sum = 0;
    for (std::size_t p = 0; p < r.real_words; ++p) sum += r.normalized[p];
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_EQ(argmax(r.normalized, r.real_words), argmax(r.raw, r.real_words));
    EXPECT_EQ(r.words[0], words[0]);
    const auto other = attend(m, ids, words, 1 - r.predicted_class);
    EXPECT_EQ(other.target_class, 1 - r.predicted_class);
  }
  const std::vector<TokenId> ids{1, 2, 3};
  const auto r = attend(m, ids, {"a", "b", "c"}, 1);
  const auto j = to_json(r, select_top(r));
  EXPECT_EQ(j["class"], "positive");
  ASSERT_EQ(j["words"].size(), 3u);
  EXPECT_EQ(j["words"][0]["pos"], 1);
  EXPECT_EQ(j["words"][2]["token"], "c");
  EXPECT_EQ(j["pad_raw"].size(), 7u);
  int selected = 0;
  for (const auto& w : j["words"]) selected += w["selected"].get<bool>();
  EXPECT_EQ(selected, 1);
}

// A small model trained where "entertaining" marks positive sentences puts
// its highest Positive score on that word.
TEST(Attend, TrainedModelPeaksOnMarkerWord) {
  auto corpus = test::planted_corpus(300, 8);
  for (auto& ex : corpus)
    for (auto& t : ex.tokens)
      if (t == "good") t = "entertaining";
  auto sentence = tokenize("This film is actually quite entertaining");
  corpus.push_back({sentence, Polarity::Positive});
  const auto vocab = build_vocab(corpus);
  const auto data = encode_all(corpus, vocab, 20);
  ModelHyper hp;
  hp.max_len = 20;
  hp.filters = 8;
  TrainedChannels tc;
  tc.rand = init_random(vocab.size(), 16, 1);
  auto state = TrainState::start(make_model(hp, assemble(InputMode::Rand, tc), 2), {});
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  train_epochs(state, data, std::vector<LabeledExample>{}, cfg);
  const auto r = attend(state.model, encode(sentence, vocab, 20), sentence, 1);
  EXPECT_EQ(r.words[argmax(r.raw, r.real_words)], "entertaining");
}
