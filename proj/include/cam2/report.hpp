#pragma once

// Highlighted sentences, frequently attended word tables and accuracy tables.

#include <algorithm>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cam2/attention.hpp"
#include "cam2/embed.hpp"
#include "cam2/train.hpp"

namespace cam2 {

// Highlight colours: blue family for positive evidence, red family for negative.
inline constexpr std::string_view kPositiveHtml = "#9ecbff";
inline constexpr std::string_view kNegativeHtml = "#ffaaa5";
inline constexpr std::string_view kPositiveAnsi = "\x1b[30;104m";
inline constexpr std::string_view kNegativeAnsi = "\x1b[30;101m";
inline constexpr std::string_view kAnsiReset = "\x1b[0m";

struct HighlightDoc {
  std::vector<std::string> tokens;
  std::size_t predicted_class = 0;
  std::vector<bool> top;
  std::vector<bool> bottom;  // all false unless the mixed view was requested
  std::vector<double> scores;
};

/// Top set for the predicted class; with `mixed`, also the bottom set
/// (positions already in the top set are left out of it).
inline HighlightDoc make_highlight(const AttentionResult& r, double fraction = 0.10, bool mixed = false) {
  HighlightDoc doc;
  doc.predicted_class = r.predicted_class;
  doc.tokens.assign(r.words.begin(), r.words.begin() + static_cast<std::ptrdiff_t>(r.real_words));
  doc.scores.assign(r.raw.begin(), r.raw.begin() + static_cast<std::ptrdiff_t>(r.real_words));
  doc.top.assign(r.real_words, false);
  doc.bottom.assign(r.real_words, false);
  for (auto p : select_top(r, fraction, Direction::Top)) doc.top[p] = true;
  if (mixed) {
    for (auto p : select_top(r, fraction, Direction::Bottom))
      if (!doc.top[p]) doc.bottom[p] = true;
  }
  return doc;
}

enum class Format { Html, Ansi, Json };

inline Format parse_format(std::string_view s) {
  if (s == "html") return Format::Html;
  if (s == "ansi") return Format::Ansi;
  if (s == "json") return Format::Json;
  throw ConfigError("unknown output format '" + std::string(s) + "' (html|ansi|json)");
}

inline std::string html_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace detail {

/// Colour for a flag set given the predicted class: the top set takes the
/// predicted class's colour, the bottom set the opposite one.
inline bool positive_colour(const HighlightDoc& doc, bool top_set) {
  const bool predicted_positive = doc.predicted_class == 1;
  return top_set ? predicted_positive : !predicted_positive;
}

inline void html_paragraph(std::ostringstream& out, const HighlightDoc& doc) {
  out << "<p class=\"" << class_name(doc.predicted_class) << "\">";
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    if (i) out << ' ';
    const bool styled = doc.top[i] || doc.bottom[i];
    if (styled) {
      const bool pos = positive_colour(doc, doc.top[i]);
      out << "<span style=\"background-color:" << (pos ? kPositiveHtml : kNegativeHtml) << "\">";
    }
    out << html_escape(doc.tokens[i]);
    if (styled) out << "</span>";
  }
  out << "</p>\n";
}

}  // namespace detail

/// Standalone UTF-8 HTML page, inline styles only, one paragraph per doc.
inline std::string render_html(const std::vector<HighlightDoc>& docs) {
  std::ostringstream out;
  out << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>attention</title>\n</head>\n<body>\n";
  for (const auto& d : docs) detail::html_paragraph(out, d);
  out << "</body>\n</html>\n";
  return out.str();
}

inline nlohmann::ordered_json highlight_json(const HighlightDoc& doc) {
  nlohmann::ordered_json j;
  j["predicted"] = class_name(doc.predicted_class);
  auto toks = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    toks.push_back({{"token", doc.tokens[i]},
                    {"pos", i + 1},
                    {"score", doc.scores[i]},
                    {"top", static_cast<bool>(doc.top[i])},
                    {"bottom", static_cast<bool>(doc.bottom[i])}});
  }
  j["tokens"] = std::move(toks);
  return j;
}

inline std::string render_highlight(const HighlightDoc& doc, Format format) {
  switch (format) {
    case Format::Html:
      return render_html({doc});
    case Format::Json:
      return highlight_json(doc).dump() + "\n";
    case Format::Ansi: {
      std::ostringstream out;
      for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
        if (i) out << ' ';
        if (doc.top[i] || doc.bottom[i]) {
          out << (detail::positive_colour(doc, doc.top[i]) ? kPositiveAnsi : kNegativeAnsi) << doc.tokens[i]
              << kAnsiReset;
        } else {
          out << doc.tokens[i];
        }
      }
      out << '\n';
      return out.str();
    }
  }
  throw ConfigError("unknown output format");
}

// ---------------------------------------------------------------------------
// Frequently attended words

struct TopWordsTable {
  // Indexed by class (0 negative, 1 positive); (token, frequency), ranked.
  std::vector<std::pair<std::string, std::size_t>> ranked[2];
};

inline const std::set<std::string>& english_stop_words() {
  static const std::set<std::string> words = {
      "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "he", "her",
      "his", "i", "in", "is", "it", "its", "me", "my", "of", "on", "or", "s", "she", "so", "t", "that",
      "the", "their", "them", "they", "this", "to", "was", "we", "were", "who", "with", "you", "your"};
  return words;
}

/// For each result takes its k highest-raw real words (earlier position on
/// ties), pools them by predicted class and ranks token frequencies
/// (descending, ties lexicographic).
inline TopWordsTable aggregate_top_words(const std::vector<AttentionResult>& results, std::size_t k = 5,
                                         bool filter_stop_words = false) {
  if (results.empty()) throw DataError("no attention results to aggregate");
  if (k < 1) throw ConfigError("top-word count must be >= 1");
  std::map<std::string, std::size_t> counts[2];
  for (const auto& r : results) {
    if (r.predicted_class > 1) throw ConfigError("top-word tables support two classes");
    std::vector<std::size_t> order;
    for (std::size_t p = 0; p < r.real_words; ++p) {
      if (r.words[p].empty()) continue;
      if (filter_stop_words && english_stop_words().count(r.words[p])) continue;
      order.push_back(p);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.raw[a] > r.raw[b]; });
    if (order.size() > k) order.resize(k);
    for (auto p : order) ++counts[r.predicted_class][r.words[p]];
  }
  TopWordsTable t;
  for (int c = 0; c < 2; ++c) {
    t.ranked[c].assign(counts[c].begin(), counts[c].end());
    std::stable_sort(t.ranked[c].begin(), t.ranked[c].end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
  }
  return t;
}

/// RFC 4180 field quoting.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

/// Two-sided CSV: rank,positive,positive_count,negative,negative_count.
inline std::string top_words_csv(const TopWordsTable& t, std::size_t rows = 0) {
  std::ostringstream out;
  out << "rank,positive,positive_count,negative,negative_count\n";
  std::size_t n = std::max(t.ranked[1].size(), t.ranked[0].size());
  if (rows) n = std::min(n, rows);
  for (std::size_t i = 0; i < n; ++i) {
    out << i + 1;
    for (int c : {1, 0}) {
      if (i < t.ranked[c].size()) {
        out << ',' << csv_field(t.ranked[c][i].first) << ',' << t.ranked[c][i].second;
      } else {
        out << ",,";
      }
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Accuracy tables

/// One row per mode in fixed order Rand, Static, Non-Static, 2channel,
/// 4channel; accuracy to 4 decimals.
struct AccuracyTable {
  std::vector<std::pair<InputMode, double>> rows;

  static AccuracyTable from(const std::vector<std::pair<InputMode, EvalReport>>& reports) {
    AccuracyTable t;
    for (InputMode m : kAllModes) {
      for (const auto& [mode, rep] : reports) {
        if (mode == m) {
          t.rows.emplace_back(m, rep.accuracy);
          break;
        }
      }
    }
    return t;
  }

  std::string csv() const {
    std::ostringstream out;
    out << "model,accuracy\n" << std::fixed << std::setprecision(4);
    for (const auto& [m, acc] : rows) out << csv_field(mode_label(m)) << ',' << acc << '\n';
    return out.str();
  }

  std::string text() const {
    std::ostringstream out;
    out << std::left << std::setw(16) << "Model" << "Accuracy\n" << std::fixed << std::setprecision(4);
    for (const auto& [m, acc] : rows) out << std::left << std::setw(16) << mode_label(m) << acc << '\n';
    return out.str();
  }
};

}  // namespace cam2
