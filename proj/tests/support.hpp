#pragma once

// Test fixtures: synthetic corpora, random toy models and a finite-difference
// gradient oracle.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "cam2/cam2.hpp"

namespace cam2::test {

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "the",   "a",     "movie", "film",  "plot",  "was",   "is",    "and",   "it",    "actor",
      "scene", "story", "very",  "quite", "this",  "that",  "with",  "about", "some",  "music",
      "cast",  "ending", "part", "one",   "time",  "there", "who",   "what",  "just",  "really",
      "role",  "people", "work", "way",   "man",   "woman", "show",  "day",   "city",  "house"};
  return words;
}

/// Sentences of neutral filler with one planted "good" (Positive) or "bad"
/// (Negative) token at a random position; classes alternate.
inline std::vector<TokenizedExample> planted_corpus(std::size_t n, std::uint64_t seed, std::size_t min_len = 6,
                                                    std::size_t max_len = 18) {
  Rng rng(seed);
  const auto& filler = filler_words();
  std::vector<TokenizedExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    TokenizedExample ex;
    ex.label = i % 2 == 0 ? Polarity::Positive : Polarity::Negative;
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    for (std::size_t j = 0; j < len; ++j) ex.tokens.push_back(filler[rng.below(filler.size())]);
    const auto at = static_cast<std::ptrdiff_t>(rng.below(len + 1));
    ex.tokens.insert(ex.tokens.begin() + at, ex.label == Polarity::Positive ? "good" : "bad");
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TokenId> random_ids(Rng& rng, std::size_t vocab, std::size_t len) {
  std::vector<TokenId> ids(len);
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(vocab));
  return ids;
}

/// Random model in precision T. Biases are randomized too so nothing sits at
/// its initial value.
template <typename T>
Model<T> toy_model(std::size_t vocab, std::size_t k, std::size_t d, std::vector<std::size_t> heights,
                   std::size_t filters, std::uint64_t seed, std::vector<bool> trainable = {true}) {
  ModelHyper hp;
  hp.dim = k;
  hp.max_len = d;
  hp.heights = std::move(heights);
  hp.filters = filters;
  ChannelConfig<float> cfg;
  cfg.mode = trainable.size() == 1 ? InputMode::NonStatic : InputMode::TwoCh;
  for (std::size_t c = 0; c < trainable.size(); ++c) {
    auto ch = init_random(vocab, k, derive_seed(seed, 50 + c));
    ch.trainable = trainable[c];
    cfg.channels.push_back(std::move(ch));
  }
  auto m = make_model(hp, cfg, derive_seed(seed, 60));
  Rng rng(derive_seed(seed, 70));
  for (auto& b : m.params.conv_bias)
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = static_cast<float>(rng.uniform(-0.2, 0.3));
  for (Eigen::Index i = 0; i < m.params.fc_bias.size(); ++i)
    m.params.fc_bias[i] = static_cast<float>(rng.uniform(-0.5, 0.5));
  return m.template cast<T>();
}

// Brute force: average of v over every window q whose span [q, q+h-1]
// (in padded coordinates, word p at row p + h - 1) contains word p.
inline std::vector<double> word_scores_oracle(const std::vector<double>& v, std::size_t h, std::size_t d) {
  std::vector<double> s(d, 0.0);
  for (std::size_t p = 0; p < d; ++p) {
    const std::size_t row = p + h - 1;
    std::size_t covering = 0;
    for (std::size_t q = 0; q < v.size(); ++q) {
      if (q <= row && row <= q + h - 1) {
        s[p] += v[q];
        ++covering;
      }
    }
    s[p] /= static_cast<double>(covering);
  }
  return s;
}

struct FdReport {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a ReLU kink
  bool frozen_rows_clean = true;
};

namespace detail {

inline std::vector<bool> relu_pattern(const ForwardTrace<double>& tr) {
  std::vector<bool> p;
  for (const auto& F : tr.maps)
    for (Eigen::Index i = 0; i < F.size(); ++i) p.push_back(F.data()[i] > 0.0);
  return p;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

}  // namespace detail

/// Compares backward() with central differences of loss() for every
/// parameter tensor entry and every trainable embedding coordinate of the
/// rows used by `ids`. Coordinates whose +/- eps evaluations change the ReLU
/// activation pattern are not differentiable there and are skipped.
inline FdReport finite_difference_check(Model<double> m, const std::vector<TokenId>& ids, std::size_t label,
                                        double lambda, const Vector<double>* mask, double eps = 1e-3) {
  auto run = [&](const Model<double>& mm) {
    return mask ? forward_masked(mm, ids, *mask) : forward(mm, ids);
  };
  const auto base = run(m);
  const auto grad = backward(m, base, label, lambda);
  const auto pattern = detail::relu_pattern(base);
  FdReport rep;

  auto probe = [&](double& x, double analytic, const std::string& name) {
    const double keep = x;
    x = keep + eps;
    const auto up = run(m);
    const double lu = loss(m, up, label, lambda);
    const auto pu = detail::relu_pattern(up);
    x = keep - eps;
    const auto dn = run(m);
    const double ld = loss(m, dn, label, lambda);
    const auto pd = detail::relu_pattern(dn);
    x = keep;
    if (pu != pattern || pd != pattern) {
      ++rep.skipped;
      return;
    }
    const double numeric = (lu - ld) / (2.0 * eps);
    const double e = detail::rel_err(analytic, numeric);
    ++rep.checked;
    if (e > rep.max_rel) {
      rep.max_rel = e;
      rep.worst = name;
    }
  };

  std::vector<const double*> g;
  grad.params.for_each([&](const std::string&, const double* d, std::size_t, bool) { g.push_back(d); });
  std::size_t t = 0;
  m.params.for_each([&](const std::string& name, double* d, std::size_t n, bool) {
    const double* gd = g[t++];
    for (std::size_t i = 0; i < n; ++i) probe(d[i], gd[i], name + "[" + std::to_string(i) + "]");
  });

  const std::set<TokenId> used(ids.begin(), ids.end());
  for (std::size_t c = 0; c < m.channels.size(); ++c) {
    if (!m.channels[c].trainable) {
      rep.frozen_rows_clean = rep.frozen_rows_clean && grad.embedding[c].empty();
      continue;
    }
    if (grad.embedding[c].count(kPadId)) rep.frozen_rows_clean = false;
    for (TokenId id : used) {
      if (id == kPadId) continue;
      auto it = grad.embedding[c].find(id);
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(m.hyper.dim); ++j) {
        const double a = it == grad.embedding[c].end() ? 0.0 : it->second[j];
        probe(m.channels[c].table(id, j), a,
              "embedding" + std::to_string(c) + "[" + std::to_string(id) + "," + std::to_string(j) + "]");
      }
    }
  }
  return rep;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cam2_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cam2::test
