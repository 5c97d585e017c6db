#pragma once

// Class activation mapping over text: per-height score vectors from the
// pre-pooling feature maps and fully connected weights, redistributed onto
// words by a sliding average over the h windows covering each word, then
// summed across filter heights.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cam2/model.hpp"

namespace cam2 {

/// v[p] = sum_i F[p, i] * w_row[i], accumulated in double.
template <typename T, typename Row>
std::vector<double> score_vector(const RowMatrix<T>& F, const Row& w_row) {
  if (static_cast<Eigen::Index>(w_row.size()) != F.cols()) throw ConfigError("score_vector: shape mismatch");
  std::vector<double> v(static_cast<std::size_t>(F.rows()), 0.0);
  for (Eigen::Index p = 0; p < F.rows(); ++p) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < F.cols(); ++i) s += static_cast<double>(F(p, i)) * static_cast<double>(w_row[i]);
    v[static_cast<std::size_t>(p)] = s;
  }
  return v;
}

/// s[p] = (1/h) * sum_{q=p}^{p+h-1} v[q] for p in [0, d): the average over
/// the h convolution windows that contain word p.
inline std::vector<double> word_scores(const std::vector<double>& v, std::size_t h, std::size_t d) {
  if (h < 1 || v.size() != d + h - 1) throw ConfigError("word_scores: |v| must equal d + h - 1");
  std::vector<double> s(d);
  for (std::size_t p = 0; p < d; ++p) {
    double acc = 0.0;
    for (std::size_t q = p; q < p + h; ++q) acc += v[q];
    s[p] = acc / static_cast<double>(h);
  }
  return s;
}

enum class Direction { Top, Bottom };

struct AttentionResult {
  std::size_t target_class = 0;
  std::size_t predicted_class = 0;
  std::vector<double> raw;         // length d
  std::vector<double> normalized;  // length d, zero at pad positions
  std::vector<std::string> words;  // length d, empty at pad positions
  std::size_t real_words = 0;      // positions [0, real_words) are words

  bool is_pad(std::size_t p) const { return p >= real_words; }
};

/// Raw scores for `target_class`. The trace must come from an inference pass.
template <typename T>
AttentionResult cam2_scores(const ForwardTrace<T>& trace, const Model<T>& model, std::size_t target_class) {
  const auto& hp = model.hyper;
  if (target_class >= hp.classes) throw ConfigError("attention class index out of range");
  if (trace.phase != Phase::Infer) throw ConfigError("attention needs an inference-mode trace");
  if (trace.maps.size() != hp.heights.size()) throw ConfigError("trace does not match the model");
  AttentionResult r;
  r.target_class = target_class;
  r.predicted_class = trace.predicted();
  r.raw.assign(hp.max_len, 0.0);
  r.real_words = trace.ids.size();
  const auto nf = static_cast<Eigen::Index>(hp.filters);
  for (std::size_t l = 0; l < hp.heights.size(); ++l) {
    const auto w_row = model.params.fc_weight.row(static_cast<Eigen::Index>(target_class))
                           .segment(static_cast<Eigen::Index>(l) * nf, nf);
    const auto s = word_scores(score_vector(trace.maps[l], w_row), hp.heights[l], hp.max_len);
    for (std::size_t p = 0; p < hp.max_len; ++p) r.raw[p] += s[p];
  }
  r.words.assign(hp.max_len, std::string{});
  return r;
}

/// sum_l mean_p(v_l[p]) - (y_c - b_fc[c]); zero up to rounding for any
/// parameters, since average pooling commutes with the fc projection.
template <typename T>
double pooling_identity_residual(const ForwardTrace<T>& trace, const Model<T>& model, std::size_t c) {
  const auto nf = static_cast<Eigen::Index>(model.hyper.filters);
  double lhs = 0.0;
  for (std::size_t l = 0; l < model.hyper.heights.size(); ++l) {
    const auto w_row = model.params.fc_weight.row(static_cast<Eigen::Index>(c))
                           .segment(static_cast<Eigen::Index>(l) * nf, nf);
    const auto v = score_vector(trace.maps[l], w_row);
    lhs += std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
  const double rhs = static_cast<double>(trace.logits[static_cast<Eigen::Index>(c)]) -
                     static_cast<double>(model.params.fc_bias[static_cast<Eigen::Index>(c)]);
  return lhs - rhs;
}

/// Shift-by-min normalization over the first `real_words` entries; those
/// sum to 1, the rest are zero. All-equal scores give a uniform result.
inline std::vector<double> normalize(const std::vector<double>& raw, std::size_t real_words) {
  if (real_words == 0) throw DataError("cannot normalize attention over zero words");
  if (real_words > raw.size()) throw ConfigError("normalize: more real words than scores");
  const double m = *std::min_element(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(real_words));
  std::vector<double> out(raw.size(), 0.0);
  double total = 0.0;
  for (std::size_t p = 0; p < real_words; ++p) total += out[p] = raw[p] - m;
  if (total > 0.0 && std::isfinite(total)) {
    for (std::size_t p = 0; p < real_words; ++p) out[p] /= total;
  } else {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(real_words),
              1.0 / static_cast<double>(real_words));
  }
  return out;
}

/// The ceil(fraction * n) highest (or lowest) scored of the first n entries,
/// ties resolved toward the earlier position. Returned in ascending position
/// order.
inline std::vector<std::size_t> select_extreme(const std::vector<double>& raw, std::size_t real_words,
                                               double fraction, Direction dir) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("selection fraction must lie in (0, 1]");
  if (real_words == 0) return {};
  // The small slack keeps 0.1 * 10 from rounding up to 2.
  auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(real_words) - 1e-9));
  count = std::clamp<std::size_t>(count, 1, real_words);
  std::vector<std::size_t> order(real_words);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dir == Direction::Top ? raw[a] > raw[b] : raw[a] < raw[b];
  });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

inline std::vector<std::size_t> select_top(const AttentionResult& r, double fraction = 0.10,
                                           Direction dir = Direction::Top) {
  return select_extreme(r.raw, r.real_words, fraction, dir);
}

/// Forward pass, raw scores for `target_class` (or the predicted class when
/// unset), normalization and the word text aligned to positions.
template <typename T>
AttentionResult attend(const Model<T>& model, const std::vector<TokenId>& ids, const std::vector<std::string>& words,
                       std::optional<std::size_t> target_class = std::nullopt) {
  const auto trace = forward(model, ids);
  AttentionResult r = cam2_scores(trace, model, target_class.value_or(trace.predicted()));
  for (std::size_t p = 0; p < ids.size() && p < words.size(); ++p) r.words[p] = words[p];
  r.normalized = normalize(r.raw, r.real_words);
  return r;
}

inline const char* class_name(std::size_t c) {
  return c == 0 ? "negative" : c == 1 ? "positive" : "other";
}

/// {class, predicted, words:[{token, pos, raw, norm, selected}], pad_raw:[...]}
/// with 1-based positions; `selected` marks the given position set.
inline nlohmann::ordered_json to_json(const AttentionResult& r, const std::vector<std::size_t>& selected) {
  nlohmann::ordered_json j;
  j["class"] = class_name(r.target_class);
  j["predicted"] = class_name(r.predicted_class);
  auto words = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < r.real_words; ++p) {
    nlohmann::ordered_json w;
    w["token"] = r.words[p];
    w["pos"] = p + 1;
    w["raw"] = r.raw[p];
    w["norm"] = r.normalized.empty() ? 0.0 : r.normalized[p];
    w["selected"] = std::binary_search(selected.begin(), selected.end(), p);
    words.push_back(std::move(w));
  }
  j["words"] = std::move(words);
  auto pad = nlohmann::ordered_json::array();
  for (std::size_t p = r.real_words; p < r.raw.size(); ++p) pad.push_back(r.raw[p]);
  j["pad_raw"] = std::move(pad);
  return j;
}

}  // namespace cam2
