#pragma once

// Word-embedding channels: random tables plus three trainers (skip-gram with
// negative sampling, weighted least-squares co-occurrence factorization and
// subword skip-gram), channel assembly for the five input modes, and
// persistence.

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cam2/corpus.hpp"
#include "cam2/error.hpp"
#include "cam2/random.hpp"

namespace cam2 {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class EmbeddingSource : std::uint32_t { Rand = 0, SkipGram = 1, CoocFactor = 2, Subword = 3 };

inline const char* source_name(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::Rand: return "rand";
    case EmbeddingSource::SkipGram: return "skipgram";
    case EmbeddingSource::CoocFactor: return "cooc";
    case EmbeddingSource::Subword: return "subword";
  }
  return "?";
}

/// A V x k table whose row 0 (padding) is always zero.
template <typename T>
struct EmbeddingChannel {
  RowMatrix<T> table;
  bool trainable = true;
  EmbeddingSource source = EmbeddingSource::Rand;

  std::size_t vocab_size() const { return static_cast<std::size_t>(table.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(table.cols()); }

  template <typename U>
  EmbeddingChannel<U> cast() const {
    return {table.template cast<U>(), trainable, source};
  }

  /// Content hash of the table bytes (float32 view, so it is stable across T).
  std::uint64_t hash() const {
    const RowMatrix<float> f = table.template cast<float>();
    std::uint64_t h = fnv1a64(f.data(), sizeof(float) * static_cast<std::size_t>(f.size()));
    const std::uint64_t shape[2] = {vocab_size(), dim()};
    return fnv1a64(shape, sizeof(shape), h);
  }
};

/// Entries i.i.d. uniform in [-0.25, 0.25]; padding row zero.
inline EmbeddingChannel<float> init_random(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) {
  if (vocab_size < 1 || dim < 1) throw ConfigError("embedding table needs V >= 1 and k >= 1");
  EmbeddingChannel<float> ch;
  ch.table.resize(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(dim));
  Rng rng(seed);
  for (Eigen::Index i = 0; i < ch.table.size(); ++i) {
    ch.table.data()[i] = static_cast<float>(rng.uniform(-0.25, 0.25));
  }
  ch.table.row(0).setZero();
  ch.trainable = true;
  ch.source = EmbeddingSource::Rand;
  return ch;
}

using Sentences = std::vector<std::vector<TokenId>>;

/// Trainer output: the materialized channel and the mean loss per epoch.
struct TrainedEmbedding {
  EmbeddingChannel<float> channel;
  std::vector<double> epoch_loss;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void check_sentences(const Sentences& sentences, std::size_t vocab_size) {
  bool has_pair = false;
  for (const auto& s : sentences) {
    std::size_t real = 0;
    for (TokenId id : s) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw DataError("token id " + std::to_string(id) + " outside vocabulary");
      }
      if (id != kPadId) ++real;
    }
    if (real >= 2) has_pair = true;
  }
  if (!has_pair) throw DataError("corpus has no sentence with two or more tokens; no context pairs");
}

/// Noise distribution proportional to count^power over non-pad ids, sampled
/// by inverse CDF.
class NoiseSampler {
 public:
  NoiseSampler(const Sentences& sentences, std::size_t vocab_size, double power) {
    std::vector<double> counts(vocab_size, 0.0);
    for (const auto& s : sentences)
      for (TokenId id : s)
        if (id != kPadId) counts[static_cast<std::size_t>(id)] += 1.0;
    cdf_.resize(vocab_size);
    double acc = 0.0;
    for (std::size_t i = 0; i < vocab_size; ++i) {
      acc += counts[i] > 0 ? std::pow(counts[i], power) : 0.0;
      cdf_[i] = acc;
    }
  }

  TokenId sample(Rng& rng) const {
    const double u = rng.uniform() * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<TokenId>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

inline std::size_t count_real(const Sentences& sentences) {
  std::size_t n = 0;
  for (const auto& s : sentences)
    for (TokenId id : s) n += id != kPadId;
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling

struct SkipGramConfig {
  std::size_t dim = 100;
  std::size_t window = 3;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
  double noise_power = 0.75;
  std::uint64_t seed = 1;
};

namespace detail {

/// Shared negative-sampling loop. `Input` exposes
///   gather(center, hidden)        -> hidden representation of the center word
///   scatter(center, grad)         -> apply an input-side update
/// Output vectors live in `out` (V x k).
template <typename Input>
std::vector<double> negative_sampling_loop(const Sentences& sentences, std::size_t vocab_size,
                                           const SkipGramConfig& cfg, RowMatrix<float>& out,
                                           Input& input) {
  const std::size_t k = cfg.dim;
  NoiseSampler noise(sentences, vocab_size, cfg.noise_power);
  Rng rng(derive_seed(cfg.seed, 1));
  const double total = static_cast<double>(cfg.epochs) * static_cast<double>(count_real(sentences));
  double processed = 0.0;
  std::vector<double> history;
  Vector<float> hidden(static_cast<Eigen::Index>(k));
  Vector<float> grad(static_cast<Eigen::Index>(k));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss = 0.0;
    std::size_t terms = 0;
    for (const auto& s : sentences) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        const TokenId center = s[i];
        if (center == kPadId) continue;
        const double lr = std::max(cfg.lr * (1.0 - processed / total), cfg.lr * 1e-4);
        processed += 1.0;
        const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
        const std::size_t hi = std::min(s.size() - 1, i + cfg.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          const TokenId context = s[j];
          if (j == i || context == kPadId) continue;
          input.gather(center, hidden);
          grad.setZero();
          for (std::size_t n = 0; n <= cfg.negatives; ++n) {
            TokenId target = context;
            double label = 1.0;
            if (n > 0) {
              target = noise.sample(rng);
              if (target == context) continue;
              label = 0.0;
            }
            auto o = out.row(target);
            const double f = static_cast<double>(hidden.dot(o.transpose()));
            const double p = sigmoid(f);
            loss += label > 0 ? -std::log(std::max(p, 1e-12)) : -std::log(std::max(1.0 - p, 1e-12));
            ++terms;
            const auto g = static_cast<float>((label - p) * lr);
            grad += g * o.transpose();
            o += g * hidden.transpose();
          }
          input.scatter(center, grad);
        }
      }
    }
    history.push_back(terms ? loss / static_cast<double>(terms) : 0.0);
  }
  return history;
}

struct DenseInput {
  RowMatrix<float>& in;
  void gather(TokenId c, Vector<float>& h) const { h = in.row(c).transpose(); }
  void scatter(TokenId c, const Vector<float>& g) { in.row(c) += g.transpose(); }
};

inline void validate(const SkipGramConfig& cfg) {
  if (cfg.dim < 1) throw ConfigError("embedding dimension must be >= 1");
  if (cfg.window < 1) throw ConfigError("context window must be >= 1");
}

}  // namespace detail

/// Center word predicts each context word within +-window. The channel is
/// the input-vector table.
inline TrainedEmbedding train_skipgram(const Sentences& sentences, std::size_t vocab_size,
                                       const SkipGramConfig& cfg) {
  detail::validate(cfg);
  detail::check_sentences(sentences, vocab_size);
  const auto V = static_cast<Eigen::Index>(vocab_size);
  const auto k = static_cast<Eigen::Index>(cfg.dim);
  RowMatrix<float> in(V, k);
  Rng init(derive_seed(cfg.seed, 0));
  const double a = 0.5 / static_cast<double>(cfg.dim);
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = static_cast<float>(init.uniform(-a, a));
  in.row(0).setZero();
  RowMatrix<float> out = RowMatrix<float>::Zero(V, k);

  detail::DenseInput input{in};
  TrainedEmbedding result;
  result.epoch_loss = detail::negative_sampling_loop(sentences, vocab_size, cfg, out, input);
  in.row(0).setZero();
  result.channel = {std::move(in), true, EmbeddingSource::SkipGram};
  return result;
}

// ---------------------------------------------------------------------------
// Co-occurrence factorization

/// Symmetric sparse counts. Each co-occurrence within the window increments
/// both (a, b) and (b, a).
class CoocMatrix {
 public:
  static CoocMatrix build(const Sentences& sentences, std::size_t window) {
    if (window < 1) throw ConfigError("co-occurrence window must be >= 1");
    CoocMatrix m;
    for (const auto& s : sentences) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == kPadId) continue;
        for (std::size_t j = i + 1; j < s.size() && j <= i + window; ++j) {
          if (s[j] == kPadId) continue;
          m.add(s[i], s[j], 1.0);
          m.add(s[j], s[i], 1.0);
        }
      }
    }
    return m;
  }

  void add(TokenId a, TokenId b, double count) { counts_[{a, b}] += count; }

  double count(TokenId a, TokenId b) const {
    auto it = counts_.find({a, b});
    return it == counts_.end() ? 0.0 : it->second;
  }

  std::size_t nonzeros() const { return counts_.size(); }

  /// Entries in (row, col) order.
  const std::map<std::pair<TokenId, TokenId>, double>& entries() const { return counts_; }

 private:
  std::map<std::pair<TokenId, TokenId>, double> counts_;
};

struct CoocFactorConfig {
  std::size_t dim = 100;
  std::size_t window = 3;
  double x_max = 100.0;
  double alpha = 0.75;
  std::size_t epochs = 25;
  double lr = 0.05;
  std::uint64_t seed = 1;
};

/// Word and context vectors with biases, fit by AdaGrad on
///   sum f(x_ij) (w_i . c_j + b_i + b~_j - log x_ij)^2,  f(x) = min(1, (x/x_max)^alpha).
class CoocFactorModel {
 public:
  CoocFactorModel(std::size_t vocab_size, const CoocFactorConfig& cfg) : cfg_(cfg) {
    if (cfg.dim < 1) throw ConfigError("embedding dimension must be >= 1");
    const auto V = static_cast<Eigen::Index>(vocab_size);
    const auto k = static_cast<Eigen::Index>(cfg.dim);
    word_.resize(V, k);
    context_.resize(V, k);
    word_bias_.resize(V);
    context_bias_.resize(V);
    Rng rng(derive_seed(cfg.seed, 0));
    const double a = 0.5 / static_cast<double>(cfg.dim);
    for (Eigen::Index i = 0; i < word_.size(); ++i) word_.data()[i] = rng.uniform(-a, a);
    for (Eigen::Index i = 0; i < context_.size(); ++i) context_.data()[i] = rng.uniform(-a, a);
    for (Eigen::Index i = 0; i < V; ++i) word_bias_[i] = rng.uniform(-a, a);
    for (Eigen::Index i = 0; i < V; ++i) context_bias_[i] = rng.uniform(-a, a);
    gsq_word_ = RowMatrix<double>::Ones(V, k);
    gsq_context_ = RowMatrix<double>::Ones(V, k);
    gsq_word_bias_ = Vector<double>::Ones(V);
    gsq_context_bias_ = Vector<double>::Ones(V);
  }

  double weight(double x) const { return x < cfg_.x_max ? std::pow(x / cfg_.x_max, cfg_.alpha) : 1.0; }

  /// Runs the configured epochs over `cooc`; returns mean weighted loss per epoch.
  std::vector<double> fit(const CoocMatrix& cooc) {
    struct Entry {
      TokenId i, j;
      double x;
    };
    std::vector<Entry> entries;
    entries.reserve(cooc.nonzeros());
    for (const auto& [key, x] : cooc.entries()) entries.push_back({key.first, key.second, x});
    std::vector<double> history;
    Rng rng(derive_seed(cfg_.seed, 1));
    Vector<double> gw, gc;
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      rng.shuffle(std::span<Entry>(entries));
      double loss = 0.0;
      for (const auto& en : entries) {
        auto w = word_.row(en.i);
        auto c = context_.row(en.j);
        const double diff = w.dot(c) + word_bias_[en.i] + context_bias_[en.j] - std::log(en.x);
        const double fdiff = weight(en.x) * diff;
        loss += 0.5 * fdiff * diff;
        gw = fdiff * c.transpose();
        gc = fdiff * w.transpose();
        for (Eigen::Index d = 0; d < w.size(); ++d) {
          w[d] -= cfg_.lr * gw[d] / std::sqrt(gsq_word_(en.i, d));
          c[d] -= cfg_.lr * gc[d] / std::sqrt(gsq_context_(en.j, d));
          gsq_word_(en.i, d) += gw[d] * gw[d];
          gsq_context_(en.j, d) += gc[d] * gc[d];
        }
        word_bias_[en.i] -= cfg_.lr * fdiff / std::sqrt(gsq_word_bias_[en.i]);
        context_bias_[en.j] -= cfg_.lr * fdiff / std::sqrt(gsq_context_bias_[en.j]);
        gsq_word_bias_[en.i] += fdiff * fdiff;
        gsq_context_bias_[en.j] += fdiff * fdiff;
      }
      history.push_back(entries.empty() ? 0.0 : loss / static_cast<double>(entries.size()));
    }
    return history;
  }

  double predict(TokenId i, TokenId j) const {
    return word_.row(i).dot(context_.row(j)) + word_bias_[i] + context_bias_[j];
  }

  /// Word + context vector sum, padding row zeroed.
  EmbeddingChannel<float> materialize() const {
    RowMatrix<float> t = (word_ + context_).cast<float>();
    t.row(0).setZero();
    return {std::move(t), true, EmbeddingSource::CoocFactor};
  }

 private:
  CoocFactorConfig cfg_;
  RowMatrix<double> word_, context_;
  Vector<double> word_bias_, context_bias_;
  RowMatrix<double> gsq_word_, gsq_context_;
  Vector<double> gsq_word_bias_, gsq_context_bias_;
};

inline TrainedEmbedding train_cooc_factor(const Sentences& sentences, std::size_t vocab_size,
                                          const CoocFactorConfig& cfg) {
  if (cfg.window < 1) throw ConfigError("co-occurrence window must be >= 1");
  detail::check_sentences(sentences, vocab_size);
  const CoocMatrix cooc = CoocMatrix::build(sentences, cfg.window);
  CoocFactorModel model(vocab_size, cfg);
  TrainedEmbedding result;
  result.epoch_loss = model.fit(cooc);
  result.channel = model.materialize();
  return result;
}

// ---------------------------------------------------------------------------
// Subword skip-gram

struct SubwordConfig {
  SkipGramConfig skipgram;
  std::size_t ngram_min = 3;
  std::size_t ngram_max = 6;
  std::size_t bucket = 200000;
};

/// Character n-grams (by code point) of "<word>" with lengths in [min, max].
inline std::vector<std::string> char_ngrams(std::string_view word, std::size_t min_n, std::size_t max_n) {
  std::vector<std::string> chars;
  chars.emplace_back("<");
  std::size_t pos = 0;
  while (pos < word.size()) {
    const std::size_t start = pos;
    detail::next_code_point(word, pos);
    chars.emplace_back(word.substr(start, pos - start));
  }
  chars.emplace_back(">");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < chars.size(); ++i) {
    std::string g;
    for (std::size_t n = 1; n <= max_n && i + n <= chars.size(); ++n) {
      g += chars[i + n - 1];
      if (n >= min_n) out.push_back(g);
    }
  }
  return out;
}

/// 32-bit FNV-1a over the n-gram bytes.
inline std::uint32_t ngram_hash(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (char c : s) {
    h ^= static_cast<std::uint32_t>(static_cast<std::uint8_t>(c));
    h *= 16777619u;
  }
  return h;
}

/// A word's vector is the sum of its whole-word row and its n-gram bucket
/// rows. Input rows: [0, V) words, [V, V + bucket) n-gram buckets.
class SubwordModel {
 public:
  SubwordModel(const Vocabulary& vocab, const SubwordConfig& cfg) : cfg_(cfg), vocab_size_(vocab.size()) {
    if (cfg.ngram_min < 1 || cfg.ngram_min > cfg.ngram_max) {
      throw ConfigError("subword n-gram range needs 1 <= ngram_min <= ngram_max");
    }
    if (cfg.bucket < 1) throw ConfigError("subword bucket count must be >= 1");
    detail::validate(cfg.skipgram);
    const auto rows = static_cast<Eigen::Index>(vocab_size_ + cfg.bucket);
    const auto k = static_cast<Eigen::Index>(cfg.skipgram.dim);
    input_.resize(rows, k);
    Rng rng(derive_seed(cfg.skipgram.seed, 0));
    const double a = 1.0 / static_cast<double>(cfg.skipgram.dim);
    for (Eigen::Index i = 0; i < input_.size(); ++i) input_.data()[i] = static_cast<float>(rng.uniform(-a, a));
    input_.row(0).setZero();
    components_.resize(vocab_size_);
    for (std::size_t id = 1; id < vocab_size_; ++id) {
      components_[id] = ngram_rows(vocab.token(static_cast<TokenId>(id)));
      components_[id].insert(components_[id].begin(), static_cast<Eigen::Index>(id));
    }
  }

  /// Updates are spread over a word's components with step 1/|components|.
  std::vector<double> fit(const Sentences& sentences) {
    detail::check_sentences(sentences, vocab_size_);
    RowMatrix<float> out = RowMatrix<float>::Zero(static_cast<Eigen::Index>(vocab_size_), input_.cols());
    struct Input {
      SubwordModel& m;
      void gather(TokenId c, Vector<float>& h) const {
        h.setZero();
        for (auto r : m.components_[static_cast<std::size_t>(c)]) h += m.input_.row(r).transpose();
      }
      void scatter(TokenId c, const Vector<float>& g) {
        const auto& comps = m.components_[static_cast<std::size_t>(c)];
        const float scale = 1.0f / static_cast<float>(comps.size());
        for (auto r : comps) m.input_.row(r) += scale * g.transpose();
      }
    } input{*this};
    return detail::negative_sampling_loop(sentences, vocab_size_, cfg_.skipgram, out, input);
  }

  std::vector<Eigen::Index> ngram_rows(std::string_view word) const {
    std::vector<Eigen::Index> rows;
    for (const auto& g : char_ngrams(word, cfg_.ngram_min, cfg_.ngram_max)) {
      rows.push_back(static_cast<Eigen::Index>(vocab_size_ + ngram_hash(g) % cfg_.bucket));
    }
    return rows;
  }

  /// Sum of n-gram bucket rows only.
  Vector<float> ngram_part(std::string_view word) const {
    Vector<float> v = Vector<float>::Zero(input_.cols());
    for (auto r : ngram_rows(word)) v += input_.row(r).transpose();
    return v;
  }

  Vector<float> whole_word(TokenId id) const { return input_.row(id).transpose(); }

  /// Raw input row: a word id below V, an n-gram bucket row from ngram_rows().
  Vector<float> input_row(Eigen::Index r) const { return input_.row(r).transpose(); }

  /// Vector for any string: in-vocabulary words include their whole-word row,
  /// out-of-vocabulary words are built from n-grams alone.
  Vector<float> vector_for(std::string_view word, const Vocabulary& vocab) const {
    Vector<float> v = ngram_part(word);
    if (vocab.contains(word)) v += whole_word(vocab.id(word));
    return v;
  }

  EmbeddingChannel<float> materialize() const {
    RowMatrix<float> t = RowMatrix<float>::Zero(static_cast<Eigen::Index>(vocab_size_), input_.cols());
    for (std::size_t id = 1; id < vocab_size_; ++id) {
      for (auto r : components_[id]) t.row(static_cast<Eigen::Index>(id)) += input_.row(r);
    }
    return {std::move(t), true, EmbeddingSource::Subword};
  }

 private:
  SubwordConfig cfg_;
  std::size_t vocab_size_;
  RowMatrix<float> input_;
  std::vector<std::vector<Eigen::Index>> components_;
};

inline TrainedEmbedding train_subword(const Sentences& sentences, const Vocabulary& vocab,
                                      const SubwordConfig& cfg) {
  SubwordModel model(vocab, cfg);
  TrainedEmbedding result;
  result.epoch_loss = model.fit(sentences);
  result.channel = model.materialize();
  return result;
}

// ---------------------------------------------------------------------------
// Channel assembly

enum class InputMode { Rand, Static, NonStatic, TwoCh, FourCh };

inline constexpr InputMode kAllModes[] = {InputMode::Rand, InputMode::Static, InputMode::NonStatic,
                                          InputMode::TwoCh, InputMode::FourCh};

inline const char* mode_name(InputMode m) {
  switch (m) {
    case InputMode::Rand: return "rand";
    case InputMode::Static: return "static";
    case InputMode::NonStatic: return "nonstatic";
    case InputMode::TwoCh: return "2ch";
    case InputMode::FourCh: return "4ch";
  }
  return "?";
}

/// Row labels as used in accuracy tables.
inline const char* mode_label(InputMode m) {
  switch (m) {
    case InputMode::Rand: return "CNN-Rand";
    case InputMode::Static: return "CNN-Static";
    case InputMode::NonStatic: return "CNN-Non-Static";
    case InputMode::TwoCh: return "CNN-2channel";
    case InputMode::FourCh: return "CNN-4channel";
  }
  return "?";
}

inline InputMode parse_mode(std::string_view s) {
  for (InputMode m : kAllModes)
    if (s == mode_name(m)) return m;
  throw ConfigError("unknown input mode '" + std::string(s) + "' (rand|static|nonstatic|2ch|4ch)");
}

inline std::size_t channel_count(InputMode m) {
  switch (m) {
    case InputMode::TwoCh: return 2;
    case InputMode::FourCh: return 4;
    default: return 1;
  }
}

/// Pretrained sources a mode draws from.
inline std::vector<EmbeddingSource> required_sources(InputMode m) {
  switch (m) {
    case InputMode::Rand: return {EmbeddingSource::Rand};
    case InputMode::FourCh:
      return {EmbeddingSource::SkipGram, EmbeddingSource::CoocFactor, EmbeddingSource::Subword};
    default: return {EmbeddingSource::SkipGram};
  }
}

struct TrainedChannels {
  std::optional<EmbeddingChannel<float>> rand, skipgram, cooc, subword;
};

template <typename T>
struct ChannelConfig {
  InputMode mode = InputMode::Rand;
  std::vector<EmbeddingChannel<T>> channels;
};

inline ChannelConfig<float> assemble(InputMode mode, const TrainedChannels& trained) {
  auto need = [](const std::optional<EmbeddingChannel<float>>& c, const char* what) {
    if (!c) throw ConfigError(std::string("input mode needs the ") + what + " channel");
    return *c;
  };
  auto with = [](EmbeddingChannel<float> c, bool trainable) {
    c.trainable = trainable;
    return c;
  };
  ChannelConfig<float> cfg;
  cfg.mode = mode;
  switch (mode) {
    case InputMode::Rand:
      cfg.channels = {with(need(trained.rand, "random"), true)};
      break;
    case InputMode::Static:
      cfg.channels = {with(need(trained.skipgram, "skip-gram"), false)};
      break;
    case InputMode::NonStatic:
      cfg.channels = {with(need(trained.skipgram, "skip-gram"), true)};
      break;
    case InputMode::TwoCh: {
      const auto sg = need(trained.skipgram, "skip-gram");
      cfg.channels = {with(sg, false), with(sg, true)};
      break;
    }
    case InputMode::FourCh: {
      const auto sg = need(trained.skipgram, "skip-gram");
      cfg.channels = {with(sg, true), with(need(trained.cooc, "co-occurrence"), true),
                      with(need(trained.subword, "subword"), true), with(sg, true)};
      break;
    }
  }
  const auto V = cfg.channels.front().table.rows();
  const auto k = cfg.channels.front().table.cols();
  for (const auto& c : cfg.channels) {
    if (c.table.rows() != V || c.table.cols() != k) throw ConfigError("channels disagree on V or k");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline constexpr char kChannelMagic[8] = {'C', 'A', 'M', '2', 'E', 'M', 'B', '\0'};
inline constexpr std::uint32_t kChannelVersion = 1;

template <typename V>
void write_pod(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw DataError("truncated binary file");
  return v;
}

}  // namespace detail

/// Header (magic, version, V, k, source, trainable) then row-major float32.
inline void write_channel(std::ostream& out, const EmbeddingChannel<float>& ch) {
  out.write(detail::kChannelMagic, sizeof(detail::kChannelMagic));
  detail::write_pod<std::uint32_t>(out, detail::kChannelVersion);
  detail::write_pod<std::uint64_t>(out, ch.vocab_size());
  detail::write_pod<std::uint64_t>(out, ch.dim());
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ch.source));
  detail::write_pod<std::uint8_t>(out, ch.trainable ? 1 : 0);
  out.write(reinterpret_cast<const char*>(ch.table.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(ch.table.size())));
}

inline EmbeddingChannel<float> read_channel(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kChannelMagic, sizeof(magic)) != 0) {
    throw DataError("not an embedding channel file");
  }
  if (detail::read_pod<std::uint32_t>(in) != detail::kChannelVersion) {
    throw DataError("unsupported embedding channel version");
  }
  const auto V = detail::read_pod<std::uint64_t>(in);
  const auto k = detail::read_pod<std::uint64_t>(in);
  const auto src = detail::read_pod<std::uint32_t>(in);
  const auto trainable = detail::read_pod<std::uint8_t>(in);
  if (src > 3) throw DataError("unknown embedding source");
  EmbeddingChannel<float> ch;
  ch.table.resize(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(k));
  in.read(reinterpret_cast<char*>(ch.table.data()),
          static_cast<std::streamsize>(sizeof(float) * V * k));
  if (!in) throw DataError("truncated embedding channel table");
  ch.source = static_cast<EmbeddingSource>(src);
  ch.trainable = trainable != 0;
  return ch;
}

inline void save_channel(const std::filesystem::path& path, const EmbeddingChannel<float>& ch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_channel(out, ch);
}

inline EmbeddingChannel<float> load_channel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return read_channel(in);
}

/// `token v1 ... vk` per vocabulary word (padding omitted), shortest
/// round-trip float formatting.
inline void export_text(std::ostream& out, const EmbeddingChannel<float>& ch, const Vocabulary& vocab) {
  char buf[64];
  for (std::size_t id = 1; id < ch.vocab_size(); ++id) {
    out << vocab.token(static_cast<TokenId>(id));
    for (Eigen::Index d = 0; d < ch.table.cols(); ++d) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), ch.table(static_cast<Eigen::Index>(id), d));
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(end - buf));
    }
    out << '\n';
  }
}

/// Reads `token v1 ... vk` lines into a table aligned with `vocab`. Tokens
/// outside the vocabulary are skipped; rows with no line stay zero. A first
/// line of exactly two integers (word2vec-style header) is ignored.
inline EmbeddingChannel<float> import_text(std::istream& in, const Vocabulary& vocab, std::size_t dim,
                                           std::size_t* matched = nullptr) {
  EmbeddingChannel<float> ch;
  ch.table = RowMatrix<float>::Zero(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
  ch.source = EmbeddingSource::SkipGram;
  std::string line;
  std::size_t hits = 0, lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    std::vector<float> vals;
    float x;
    while (ls >> x) vals.push_back(x);
    if (lineno == 1 && vals.size() == 1 && tok.find_first_not_of("0123456789") == std::string::npos) continue;
    if (vals.size() != dim) throw DataError("text embedding line " + std::to_string(lineno) + " has wrong width");
    if (!vocab.contains(tok)) continue;
    const TokenId id = vocab.id(tok);
    for (std::size_t d = 0; d < dim; ++d) ch.table(id, static_cast<Eigen::Index>(d)) = vals[d];
    ++hits;
  }
  if (matched) *matched = hits;
  return ch;
}

}  // namespace cam2
