#pragma once

// Sentence CNN with symmetric zero padding, multi-height ReLU convolution,
// average pooling and a fully connected output layer, plus its gradients.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cam2/corpus.hpp"
#include "cam2/embed.hpp"
#include "cam2/error.hpp"
#include "cam2/random.hpp"

namespace cam2 {

struct ModelHyper {
  std::size_t dim = 100;                       // k
  std::size_t max_len = 100;                   // d
  std::vector<std::size_t> heights{3, 4, 5};  // filter heights h, ascending
  std::size_t filters = 128;                   // per height
  std::size_t classes = 2;                     // c
  std::size_t channels = 1;

  void validate() const {
    if (dim < 1 || max_len < 1 || filters < 1) throw ConfigError("k, d and n_filters must be >= 1");
    if (classes < 2) throw ConfigError("class count must be >= 2");
    if (channels < 1) throw ConfigError("at least one input channel is required");
    if (heights.empty()) throw ConfigError("at least one filter height is required");
    for (std::size_t i = 0; i < heights.size(); ++i) {
      if (heights[i] < 1) throw ConfigError("filter heights must be >= 1");
      if (i > 0 && heights[i] <= heights[i - 1]) throw ConfigError("filter heights must be strictly ascending");
    }
  }

  std::size_t max_height() const { return heights.back(); }
  std::size_t feature_count() const { return heights.size() * filters; }
  /// Feature-map length I_h = d + h - 1.
  std::size_t map_length(std::size_t h) const { return max_len + h - 1; }
};

/// Convolution banks are indexed [height][channel], each filters x (h*k);
/// channel responses are summed before the shared per-height bias.
template <typename T>
struct ModelParams {
  std::vector<std::vector<RowMatrix<T>>> conv_weight;
  std::vector<Vector<T>> conv_bias;
  RowMatrix<T> fc_weight;  // classes x (heights * filters)
  Vector<T> fc_bias;

  static ModelParams zeros(const ModelHyper& hp) {
    ModelParams p;
    const auto nf = static_cast<Eigen::Index>(hp.filters);
    for (std::size_t h : hp.heights) {
      p.conv_weight.emplace_back(hp.channels,
                                 RowMatrix<T>::Zero(nf, static_cast<Eigen::Index>(h * hp.dim)));
      p.conv_bias.push_back(Vector<T>::Zero(nf));
    }
    p.fc_weight = RowMatrix<T>::Zero(static_cast<Eigen::Index>(hp.classes),
                                     static_cast<Eigen::Index>(hp.feature_count()));
    p.fc_bias = Vector<T>::Zero(static_cast<Eigen::Index>(hp.classes));
    return p;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> p;
    for (const auto& per_h : conv_weight) {
      auto& dst = p.conv_weight.emplace_back();
      for (const auto& w : per_h) dst.push_back(w.template cast<U>());
    }
    for (const auto& b : conv_bias) p.conv_bias.push_back(b.template cast<U>());
    p.fc_weight = fc_weight.template cast<U>();
    p.fc_bias = fc_bias.template cast<U>();
    return p;
  }

  /// Visits every tensor as (name, mutable flat data, size, is_weight).
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t l = 0; l < conv_weight.size(); ++l) {
      for (std::size_t c = 0; c < conv_weight[l].size(); ++c) {
        auto& w = conv_weight[l][c];
        f("conv_weight[" + std::to_string(l) + "][" + std::to_string(c) + "]", w.data(),
          static_cast<std::size_t>(w.size()), true);
      }
      f("conv_bias[" + std::to_string(l) + "]", conv_bias[l].data(),
        static_cast<std::size_t>(conv_bias[l].size()), false);
    }
    f(std::string("fc_weight"), fc_weight.data(), static_cast<std::size_t>(fc_weight.size()), true);
    f(std::string("fc_bias"), fc_bias.data(), static_cast<std::size_t>(fc_bias.size()), false);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& name, T* data, std::size_t n, bool is_weight) {
          f(name, static_cast<const T*>(data), n, is_weight);
        });
  }

  bool finite() const {
    bool ok = true;
    for_each([&](const std::string&, const T* d, std::size_t n, bool) {
      for (std::size_t i = 0; i < n; ++i) ok = ok && std::isfinite(static_cast<double>(d[i]));
    });
    return ok;
  }

  /// Sum of squared weights (conv and fc weights, not biases).
  double weight_norm_sq() const {
    double s = 0.0;
    for_each([&](const std::string&, const T* d, std::size_t n, bool is_weight) {
      if (!is_weight) return;
      for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(d[i]) * static_cast<double>(d[i]);
    });
    return s;
  }
};

/// Conv weights uniform in +-sqrt(1 / fan_in), conv biases 0.1 (so ReLUs
/// start active), fc weights uniform in +-sqrt(6 / (n + c)), fc biases zero.
inline ModelParams<float> init_params(const ModelHyper& hp, std::uint64_t seed) {
  hp.validate();
  auto p = ModelParams<float>::zeros(hp);
  Rng rng(seed);
  for (std::size_t l = 0; l < hp.heights.size(); ++l) {
    const double a = std::sqrt(1.0 / static_cast<double>(hp.heights[l] * hp.dim * hp.channels));
    for (auto& w : p.conv_weight[l])
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.uniform(-a, a));
    p.conv_bias[l].setConstant(0.1f);
  }
  const double a = std::sqrt(6.0 / static_cast<double>(hp.feature_count() + hp.classes));
  for (Eigen::Index i = 0; i < p.fc_weight.size(); ++i) {
    p.fc_weight.data()[i] = static_cast<float>(rng.uniform(-a, a));
  }
  return p;
}

/// Hyperparameters, embedding channels and CNN parameters together.
template <typename T>
struct Model {
  ModelHyper hyper;
  InputMode mode = InputMode::Rand;
  std::vector<EmbeddingChannel<T>> channels;
  ModelParams<T> params;

  std::size_t vocab_size() const { return channels.front().vocab_size(); }

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.hyper = hyper;
    m.mode = mode;
    for (const auto& c : channels) m.channels.push_back(c.template cast<U>());
    m.params = params.template cast<U>();
    return m;
  }

  void validate() const {
    hyper.validate();
    if (channels.size() != hyper.channels) throw ConfigError("channel count does not match hyperparameters");
    for (const auto& c : channels) {
      if (c.dim() != hyper.dim || c.vocab_size() != channels.front().vocab_size()) {
        throw ConfigError("embedding channel shape does not match the model");
      }
    }
    const auto ref = ModelParams<T>::zeros(hyper);
    if (params.conv_weight.size() != ref.conv_weight.size()) throw ConfigError("parameter shape mismatch");
    for (std::size_t l = 0; l < ref.conv_weight.size(); ++l) {
      if (params.conv_weight[l].size() != ref.conv_weight[l].size() ||
          params.conv_bias[l].size() != ref.conv_bias[l].size()) {
        throw ConfigError("parameter shape mismatch");
      }
      for (std::size_t c = 0; c < ref.conv_weight[l].size(); ++c) {
        if (params.conv_weight[l][c].rows() != ref.conv_weight[l][c].rows() ||
            params.conv_weight[l][c].cols() != ref.conv_weight[l][c].cols()) {
          throw ConfigError("parameter shape mismatch");
        }
      }
    }
    if (params.fc_weight.rows() != ref.fc_weight.rows() || params.fc_weight.cols() != ref.fc_weight.cols() ||
        params.fc_bias.size() != ref.fc_bias.size()) {
      throw ConfigError("parameter shape mismatch");
    }
  }
};

/// Builds a model from assembled channels with freshly initialized parameters.
inline Model<float> make_model(ModelHyper hp, const ChannelConfig<float>& cfg, std::uint64_t seed) {
  if (cfg.channels.empty()) throw ConfigError("no embedding channels");
  hp.channels = cfg.channels.size();
  hp.dim = cfg.channels.front().dim();
  Model<float> m;
  m.hyper = hp;
  m.mode = cfg.mode;
  m.channels = cfg.channels;
  m.params = init_params(hp, seed);
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Building blocks

/// (d + 2(h-1)) x k input for one channel: h-1 zero rows, the d word rows
/// (ids right-padded with the pad id to d), h-1 zero rows.
template <typename T>
RowMatrix<T> pad_input(const std::vector<TokenId>& ids, const RowMatrix<T>& table, std::size_t h,
                       std::size_t d) {
  if (ids.size() > d) throw DataError("sequence longer than the model's max length");
  RowMatrix<T> X = RowMatrix<T>::Zero(static_cast<Eigen::Index>(d + 2 * (h - 1)), table.cols());
  for (std::size_t p = 0; p < ids.size(); ++p) {
    X.row(static_cast<Eigen::Index>(h - 1 + p)) = table.row(ids[p]);
  }
  return X;
}

namespace detail {

/// Overlapping-row view of a padded input: row j is rows j..j+h-1 of `X`
/// (starting at row `offset`) flattened.
template <typename T>
auto windows(const RowMatrix<T>& X, std::size_t offset, std::size_t count, std::size_t h) {
  using Map = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;
  const auto k = X.cols();
  return Map(X.data() + static_cast<Eigen::Index>(offset) * k, static_cast<Eigen::Index>(count),
             static_cast<Eigen::Index>(h) * k, Eigen::OuterStride<>(k));
}

}  // namespace detail

/// F[j, i] = max(0, sum_ch <W_ch[i], X_ch[j .. j+h-1]> + b[i]) over the
/// I = rows(X) - h + 1 windows of each padded channel input.
template <typename T>
RowMatrix<T> conv_relu(const std::vector<const RowMatrix<T>*>& inputs, const std::vector<RowMatrix<T>>& weight,
                       const Vector<T>& bias, std::size_t h) {
  if (inputs.empty() || inputs.size() != weight.size()) throw ConfigError("conv: channel count mismatch");
  const auto rows = static_cast<std::size_t>(inputs.front()->rows());
  const auto k = inputs.front()->cols();
  if (h < 1 || rows < h) throw ConfigError("conv: input shorter than the filter");
  const std::size_t I = rows - h + 1;
  RowMatrix<T> pre = RowMatrix<T>::Zero(static_cast<Eigen::Index>(I), bias.size());
  for (std::size_t c = 0; c < inputs.size(); ++c) {
    const auto& X = *inputs[c];
    if (X.cols() != k || static_cast<std::size_t>(X.rows()) != rows ||
        weight[c].cols() != static_cast<Eigen::Index>(h) * k || weight[c].rows() != bias.size()) {
      throw ConfigError("conv: shape mismatch");
    }
    pre.noalias() += detail::windows(X, 0, I, h) * weight[c].transpose();
  }
  pre.rowwise() += bias.transpose();
  return pre.cwiseMax(T(0));
}

template <typename T>
RowMatrix<T> conv_relu(const RowMatrix<T>& X, const RowMatrix<T>& weight, const Vector<T>& bias, std::size_t h) {
  return conv_relu<T>(std::vector<const RowMatrix<T>*>{&X}, std::vector<RowMatrix<T>>{weight}, bias, h);
}

/// Column means, accumulated in double.
template <typename T>
Vector<T> avg_pool(const RowMatrix<T>& F) {
  Vector<T> z(F.cols());
  for (Eigen::Index i = 0; i < F.cols(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < F.rows(); ++j) s += static_cast<double>(F(j, i));
    z[i] = static_cast<T>(s / static_cast<double>(F.rows()));
  }
  return z;
}

// ---------------------------------------------------------------------------
// Forward / backward

enum class Phase { Train, Infer };

template <typename T>
struct ForwardTrace {
  std::vector<TokenId> ids;          // unpadded, |ids| <= d
  std::vector<RowMatrix<T>> padded;  // per channel, padded by (h_max - 1) on both sides
  std::vector<RowMatrix<T>> maps;    // per height, I_h x filters, post-ReLU
  Vector<T> pooled;                  // z
  Vector<T> mask;                    // dropout multipliers (0 or 1/keep); empty when inferring
  Vector<T> fc_input;                // z after the mask
  Vector<T> logits;                  // y
  Phase phase = Phase::Infer;

  /// Predicted class; ties resolve to the lower class index (Negative).
  std::size_t predicted() const {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[best]) best = c;
    return static_cast<std::size_t>(best);
  }
};

namespace detail {

template <typename T>
ForwardTrace<T> forward_impl(const Model<T>& model, const std::vector<TokenId>& ids, const Vector<T>* mask) {
  const auto& hp = model.hyper;
  if (ids.size() > hp.max_len) throw DataError("sequence longer than the model's max length");
  const auto V = model.vocab_size();
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw DataError("token id " + std::to_string(id) + " outside the model vocabulary");
    }
  }
  ForwardTrace<T> tr;
  tr.ids = ids;
  const std::size_t hmax = hp.max_height();
  for (const auto& ch : model.channels) tr.padded.push_back(pad_input(ids, ch.table, hmax, hp.max_len));

  tr.pooled.resize(static_cast<Eigen::Index>(hp.feature_count()));
  const auto nf = static_cast<Eigen::Index>(hp.filters);
  for (std::size_t l = 0; l < hp.heights.size(); ++l) {
    const std::size_t h = hp.heights[l];
    const std::size_t I = hp.map_length(h);
    RowMatrix<T> pre = RowMatrix<T>::Zero(static_cast<Eigen::Index>(I), nf);
    for (std::size_t c = 0; c < model.channels.size(); ++c) {
      pre.noalias() += windows(tr.padded[c], hmax - h, I, h) * model.params.conv_weight[l][c].transpose();
    }
    pre.rowwise() += model.params.conv_bias[l].transpose();
    tr.maps.push_back(pre.cwiseMax(T(0)));
    tr.pooled.segment(static_cast<Eigen::Index>(l) * nf, nf) = avg_pool(tr.maps.back());
  }
  if (mask) {
    tr.phase = Phase::Train;
    tr.mask = *mask;
    tr.fc_input = tr.pooled.cwiseProduct(*mask);
  } else {
    tr.fc_input = tr.pooled;
  }
  tr.logits.resize(model.params.fc_bias.size());
  for (Eigen::Index c = 0; c < tr.logits.size(); ++c) {
    double s = static_cast<double>(model.params.fc_bias[c]);
    for (Eigen::Index i = 0; i < tr.fc_input.size(); ++i) {
      s += static_cast<double>(model.params.fc_weight(c, i)) * static_cast<double>(tr.fc_input[i]);
    }
    tr.logits[c] = static_cast<T>(s);
  }
  return tr;
}

}  // namespace detail

/// Inference forward pass: no dropout.
template <typename T>
ForwardTrace<T> forward(const Model<T>& model, const std::vector<TokenId>& ids) {
  return detail::forward_impl<T>(model, ids, nullptr);
}

/// Training forward pass with inverted dropout on z (keep probability `keep`).
template <typename T>
ForwardTrace<T> forward(const Model<T>& model, const std::vector<TokenId>& ids, Rng& rng, double keep) {
  if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError("dropout keep probability must lie in (0, 1]");
  Vector<T> mask(static_cast<Eigen::Index>(model.hyper.feature_count()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(keep) ? T(1.0 / keep) : T(0);
  return detail::forward_impl<T>(model, ids, &mask);
}

/// Training forward pass with an explicit dropout mask.
template <typename T>
ForwardTrace<T> forward_masked(const Model<T>& model, const std::vector<TokenId>& ids, const Vector<T>& mask) {
  if (mask.size() != static_cast<Eigen::Index>(model.hyper.feature_count())) {
    throw ConfigError("dropout mask size mismatch");
  }
  return detail::forward_impl<T>(model, ids, &mask);
}

/// Softmax probabilities computed in double.
template <typename T>
std::vector<double> softmax(const Vector<T>& logits) {
  double mx = static_cast<double>(logits.maxCoeff());
  std::vector<double> p(static_cast<std::size_t>(logits.size()));
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) s += p[c] = std::exp(static_cast<double>(logits[static_cast<Eigen::Index>(c)]) - mx);
  for (double& v : p) v /= s;
  return p;
}

template <typename T>
double cross_entropy(const Vector<T>& logits, std::size_t label) {
  const double mx = static_cast<double>(logits.maxCoeff());
  double s = 0.0;
  for (Eigen::Index c = 0; c < logits.size(); ++c) s += std::exp(static_cast<double>(logits[c]) - mx);
  return mx + std::log(s) - static_cast<double>(logits[static_cast<Eigen::Index>(label)]);
}

/// Cross-entropy of the trace plus (lambda / 2) * sum of squared weights.
template <typename T>
double loss(const Model<T>& model, const ForwardTrace<T>& trace, std::size_t label, double lambda) {
  return cross_entropy(trace.logits, label) + 0.5 * lambda * model.params.weight_norm_sq();
}

/// Gradients for every trainable quantity. Embedding gradients are sparse
/// (row id -> gradient) and present only for trainable channels.
template <typename T>
struct Gradients {
  ModelParams<T> params;
  std::vector<std::map<TokenId, Vector<T>>> embedding;

  static Gradients zeros(const ModelHyper& hp) {
    return {ModelParams<T>::zeros(hp), std::vector<std::map<TokenId, Vector<T>>>(hp.channels)};
  }

  void add(const Gradients& o) {
    auto add_tensors = [](ModelParams<T>& a, const ModelParams<T>& b) {
      std::vector<const T*> src;
      b.for_each([&](const std::string&, const T* d, std::size_t, bool) { src.push_back(d); });
      std::size_t t = 0;
      a.for_each([&](const std::string&, T* d, std::size_t n, bool) {
        const T* s = src[t++];
        for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
      });
    };
    add_tensors(params, o.params);
    for (std::size_t c = 0; c < embedding.size(); ++c) {
      for (const auto& [id, g] : o.embedding[c]) {
        auto [it, inserted] = embedding[c].try_emplace(id, g);
        if (!inserted) it->second += g;
      }
    }
  }

  void scale(T s) {
    params.for_each([&](const std::string&, T* d, std::size_t n, bool) {
      for (std::size_t i = 0; i < n; ++i) d[i] *= s;
    });
    for (auto& per : embedding)
      for (auto& [id, g] : per) g *= s;
  }

  /// Adds lambda * W to the weight tensors.
  void add_weight_decay(const ModelParams<T>& p, double lambda) {
    if (lambda == 0.0) return;
    std::vector<const T*> src;
    p.for_each([&](const std::string&, const T* d, std::size_t, bool) { src.push_back(d); });
    std::size_t t = 0;
    params.for_each([&](const std::string&, T* d, std::size_t n, bool is_weight) {
      const T* s = src[t++];
      if (!is_weight) return;
      for (std::size_t i = 0; i < n; ++i) d[i] += static_cast<T>(lambda) * s[i];
    });
  }
};

/// Gradient of loss() for one example. L2 covers conv and fc weights only;
/// embedding rows receive gradient only in trainable channels and the pad
/// row never does.
template <typename T>
Gradients<T> backward(const Model<T>& model, const ForwardTrace<T>& trace, std::size_t label, double lambda) {
  const auto& hp = model.hyper;
  if (label >= hp.classes) throw ConfigError("label outside the class range");
  if (trace.maps.size() != hp.heights.size() || trace.padded.size() != model.channels.size() ||
      trace.pooled.size() != static_cast<Eigen::Index>(hp.feature_count()) ||
      trace.logits.size() != static_cast<Eigen::Index>(hp.classes)) {
    throw ConfigError("forward trace does not match the model");
  }
  auto g = Gradients<T>::zeros(hp);
  const auto probs = softmax(trace.logits);
  Vector<T> dy(static_cast<Eigen::Index>(hp.classes));
  for (std::size_t c = 0; c < hp.classes; ++c) {
    dy[static_cast<Eigen::Index>(c)] = static_cast<T>(probs[c] - (c == label ? 1.0 : 0.0));
  }
  g.params.fc_weight.noalias() = dy * trace.fc_input.transpose();
  g.params.fc_bias = dy;
  Vector<T> dz = model.params.fc_weight.transpose() * dy;
  if (trace.phase == Phase::Train) dz = dz.cwiseProduct(trace.mask);

  const std::size_t hmax = hp.max_height();
  const auto k = static_cast<Eigen::Index>(hp.dim);
  const auto nf = static_cast<Eigen::Index>(hp.filters);
  std::vector<RowMatrix<T>> dX;
  std::vector<bool> need_dx;
  for (const auto& ch : model.channels) {
    need_dx.push_back(ch.trainable);
    dX.push_back(ch.trainable ? RowMatrix<T>::Zero(trace.padded.front().rows(), k) : RowMatrix<T>());
  }

  for (std::size_t l = 0; l < hp.heights.size(); ++l) {
    const std::size_t h = hp.heights[l];
    const std::size_t I = hp.map_length(h);
    const auto& F = trace.maps[l];
    RowMatrix<T> dpre(static_cast<Eigen::Index>(I), nf);
    for (Eigen::Index i = 0; i < nf; ++i) {
      const T per_pos = dz[static_cast<Eigen::Index>(l) * nf + i] / static_cast<T>(I);
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(I); ++j) dpre(j, i) = F(j, i) > T(0) ? per_pos : T(0);
    }
    g.params.conv_bias[l] = dpre.colwise().sum().transpose();
    for (std::size_t c = 0; c < model.channels.size(); ++c) {
      const auto win = detail::windows(trace.padded[c], hmax - h, I, h);
      g.params.conv_weight[l][c].noalias() = dpre.transpose() * win;
      if (!need_dx[c]) continue;
      const RowMatrix<T> dwin = dpre * model.params.conv_weight[l][c];
      for (std::size_t r = 0; r < h; ++r) {
        dX[c].middleRows(static_cast<Eigen::Index>(hmax - h + r), static_cast<Eigen::Index>(I)) +=
            dwin.middleCols(static_cast<Eigen::Index>(r) * k, k);
      }
    }
  }
  g.add_weight_decay(model.params, lambda);

  for (std::size_t c = 0; c < model.channels.size(); ++c) {
    if (!need_dx[c]) continue;
    for (std::size_t p = 0; p < trace.ids.size(); ++p) {
      const TokenId id = trace.ids[p];
      if (id == kPadId) continue;
      Vector<T> row = dX[c].row(static_cast<Eigen::Index>(hmax - 1 + p)).transpose();
      auto [it, inserted] = g.embedding[c].try_emplace(id, row);
      if (!inserted) it->second += row;
    }
  }
  return g;
}

}  // namespace cam2
