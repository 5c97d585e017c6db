#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace cam2;

namespace {

struct Setup {
  Vocabulary vocab;
  std::vector<LabeledExample> train, test;
};

Setup planted(std::size_t n, std::uint64_t seed, std::size_t d = 20) {
  const auto corpus = test::planted_corpus(n, seed);
  auto parts = split(corpus, 0.7, seed);
  Setup s{build_vocab(parts.train), {}, {}};
  s.train = encode_all(parts.train, s.vocab, d);
  s.test = encode_all(parts.test, s.vocab, d);
  return s;
}

Model<float> small_model(const Vocabulary& v, InputMode mode, std::uint64_t seed = 1, std::size_t d = 20) {
  ModelHyper hp;
  hp.max_len = d;
  hp.filters = 6;
  TrainedChannels tc;
  tc.rand = init_random(v.size(), 12, seed);
  tc.skipgram = init_random(v.size(), 12, seed + 1);
  tc.skipgram->source = EmbeddingSource::SkipGram;
  tc.cooc = init_random(v.size(), 12, seed + 2);
  tc.subword = init_random(v.size(), 12, seed + 3);
  return make_model(hp, assemble(mode, tc), seed);
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  return c;
}

double weight_norm(const ModelParams<float>& p, bool conv) {
  double s = 0;
  p.for_each([&](const std::string& name, const float* d, std::size_t n, bool is_weight) {
    if (!is_weight || (name.rfind("conv", 0) == 0) != conv) return;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(d[i]) * d[i];
  });
  return s;
}

bool same_params(const Model<float>& a, const Model<float>& b) {
  bool same = a.params.fc_weight == b.params.fc_weight && a.params.fc_bias == b.params.fc_bias;
  for (std::size_t l = 0; l < a.params.conv_weight.size(); ++l) {
    same = same && a.params.conv_bias[l] == b.params.conv_bias[l];
    for (std::size_t c = 0; c < a.params.conv_weight[l].size(); ++c)
      same = same && a.params.conv_weight[l][c] == b.params.conv_weight[l][c];
  }
  for (std::size_t c = 0; c < a.channels.size(); ++c) same = same && a.channels[c].table == b.channels[c].table;
  return same;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.keep = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.keep = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto s = planted(60, 1);
  for (auto kind : {OptimizerKind::Adam, OptimizerKind::Sgd}) {
    const auto m = small_model(s.vocab, InputMode::NonStatic);
    auto cfg = quick(3);
    cfg.optimizer.kind = kind;
    cfg.optimizer.lr = 0.0;
    auto state = TrainState::start(m, cfg);
    train_epochs(state, s.train, s.test, cfg);
    EXPECT_TRUE(same_params(state.model, m));
  }
}

TEST(Train, SeparableCorpusReachesFullTrainAccuracy) {
  std::vector<TokenizedExample> corpus;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    TokenizedExample ex;
    ex.label = i % 2 ? Polarity::Positive : Polarity::Negative;
    for (int j = 0; j < 6; ++j) ex.tokens.push_back(test::filler_words()[rng.below(10)]);
    if (ex.label == Polarity::Positive) ex.tokens.insert(ex.tokens.begin() + static_cast<std::ptrdiff_t>(rng.below(6)), "marker");
    corpus.push_back(ex);
  }
  const auto vocab = build_vocab(corpus);
  const auto data = encode_all(corpus, vocab, 20);
  // Weight decay at 0.1 pulls a model this small off the separating solution.
  auto cfg = quick(30);
  cfg.batch_size = 4;
  cfg.lambda = 0.0;
  cfg.optimizer.lr = 0.01;
  auto state = TrainState::start(small_model(vocab, InputMode::Rand), cfg);
  double acc = 0;
  train_epochs(state, data, std::vector<LabeledExample>{}, cfg, [&](const TrainState& st) {
    if (acc < 1.0) acc = evaluate(st.model, data).accuracy;
  });
  EXPECT_EQ(acc, 1.0);
}

TEST(Train, SameSeedSameHistory) {
  const auto s = planted(80, 2);
  auto run = [&] {
    auto cfg = quick(3);
    auto state = TrainState::start(small_model(s.vocab, InputMode::Rand), cfg);
    train_epochs(state, s.train, s.test, cfg);
    return state;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].test_acc, b.history[i].test_acc);
  }
  EXPECT_TRUE(same_params(a.model, b.model));
}

TEST(Train, WeightDecayAloneShrinksWeights) {
  const auto s = planted(20, 3);
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    auto m = small_model(s.vocab, InputMode::Rand);
    const double conv0 = weight_norm(m.params, true), fc0 = weight_norm(m.params, false);
    auto g = Gradients<float>::zeros(m.hyper);
    g.add_weight_decay(m.params, 0.1);
    OptimizerConfig oc;
    oc.kind = kind;
    oc.lr = 1e-3;
    Optimizer opt(oc, m);
    opt.step(m, g);
    EXPECT_LT(weight_norm(m.params, true), conv0);
    EXPECT_LT(weight_norm(m.params, false), fc0);
  }
}

TEST(Train, SgdLossOnFixedBatchIsMonotone) {
  const auto s = planted(40, 4);
  auto m = small_model(s.vocab, InputMode::NonStatic);
  std::vector<const LabeledExample*> batch{&s.train[0], &s.train[1], &s.train[2], &s.train[3]};
  OptimizerConfig oc;
  oc.kind = OptimizerKind::Sgd;
  oc.lr = 1e-3;
  Optimizer opt(oc, m);
  Rng rng(1);
  Gradients<float> g;
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 50; ++step) {
    const double l = batch_gradient<LabeledExample>(m, batch, rng, 1.0, 0.1, g);
    EXPECT_LE(l, prev + 1e-7) << "step " << step;
    prev = l;
    opt.step(m, g);
  }
}

TEST(Evaluate, TieRuleAndErrors) {
  const auto s = planted(40, 5);
  auto m = small_model(s.vocab, InputMode::Rand);
  m.params.fc_weight.setZero();
  m.params.fc_bias.setZero();
  std::vector<LabeledExample> balanced(s.train.begin(), s.train.end());
  const auto r = evaluate(m, balanced);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.confusion[1][1] + r.confusion[0][1], 0u);
  EXPECT_EQ(r.confusion[0][0] + r.confusion[1][0], r.total);
  EXPECT_THROW(evaluate(m, std::vector<LabeledExample>{}), DataError);
}

TEST(Evaluate, MemorizesFourExamplesAndIgnoresOrder) {
  const auto s = planted(40, 6);
  std::vector<LabeledExample> four(s.train.begin(), s.train.begin() + 4);
  auto cfg = quick(60);
  cfg.batch_size = 4;
  cfg.keep = 1.0;
  cfg.lambda = 0.0;
  cfg.optimizer.lr = 0.01;
  auto state = TrainState::start(small_model(s.vocab, InputMode::Rand), cfg);
  train_epochs(state, four, std::vector<LabeledExample>{}, cfg);
  EXPECT_EQ(evaluate(state.model, four).accuracy, 1.0);

  const auto a = evaluate(state.model, s.test);
  auto shuffled = s.test;
  Rng rng(2);
  rng.shuffle(std::span<LabeledExample>(shuffled));
  const auto b = evaluate(state.model, shuffled);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.confusion[0][0] + a.confusion[0][1] + a.confusion[1][0] + a.confusion[1][1], a.total);
}

TEST(Train, FrozenChannelsKeepTheirHash) {
  const auto s = planted(60, 7);
  for (auto mode : {InputMode::Static, InputMode::TwoCh}) {
    const auto m = small_model(s.vocab, mode);
    const auto before = m.channels[0].hash();
    auto state = TrainState::start(m, quick(2));
    train_epochs(state, s.train, s.test, quick(2));
    EXPECT_FALSE(state.model.channels[0].trainable);
    EXPECT_EQ(state.model.channels[0].hash(), before);
    if (mode == InputMode::TwoCh) {
      EXPECT_NE(state.model.channels[1].hash(), before);
    }
  }
}

TEST(Train, PadRowsStayZero) {
  const auto s = planted(60, 8);
  auto state = TrainState::start(small_model(s.vocab, InputMode::FourCh), quick(2));
  train_epochs(state, s.train, s.test, quick(2));
  for (const auto& ch : state.model.channels) EXPECT_TRUE(ch.table.row(0).isZero(0));
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto s = planted(80, 9);
  test::TempDir dir("resume");
  const auto m = small_model(s.vocab, InputMode::NonStatic);
  auto full = TrainState::start(m, quick(4));
  train_epochs(full, s.train, s.test, quick(4));

  auto first = TrainState::start(m, quick(2));
  train_epochs(first, s.train, s.test, quick(2));
  save_state(dir.path() / "state.bin", first, 7);
  std::uint64_t hash = 0;
  auto resumed = load_state(dir.path() / "state.bin", quick(4), &hash);
  EXPECT_EQ(hash, 7u);
  EXPECT_EQ(resumed.epochs_done, 2u);
  train_epochs(resumed, s.train, s.test, quick(4));
  EXPECT_TRUE(same_params(resumed.model, full.model));
  EXPECT_TRUE(same_params(resumed.best, full.best));
  ASSERT_EQ(resumed.history.size(), 4u);
  EXPECT_EQ(resumed.history[3].train_loss, full.history[3].train_loss);
}

TEST(Train, DivergenceIsReported) {
  const auto s = planted(40, 10);
  auto cfg = quick(3);
  cfg.optimizer.kind = OptimizerKind::Sgd;
  cfg.optimizer.lr = 1e30;
  auto state = TrainState::start(small_model(s.vocab, InputMode::Rand), cfg);
  EXPECT_THROW(train_epochs(state, s.train, s.test, cfg), DivergenceError);
}

TEST(Train, HistoryCsv) {
  std::vector<EpochRecord> h = {{1, 0.5, 0.75}, {2, 0.25, std::nan("")}};
  std::ostringstream out;
  write_history_csv(out, h);
  EXPECT_EQ(out.str(), "epoch,train_loss,test_acc\n1,0.5,0.75\n2,0.25,\n");
}
