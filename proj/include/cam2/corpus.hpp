#pragma once

// Review ingestion, tokenization, polarity labelling, vocabulary and
// stratified train/test splitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cam2/detail/utf8.hpp"
#include "cam2/error.hpp"
#include "cam2/random.hpp"

namespace cam2 {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;

/// Class index used throughout the model: logits are ordered {Negative, Positive}.
enum class Polarity : int { Negative = 0, Positive = 1 };

enum class Label { Negative, Positive, Excluded };

inline const char* polarity_name(Polarity p) {
  return p == Polarity::Positive ? "positive" : "negative";
}

struct TokenizeOptions {
  bool fold_case = true;
};

namespace detail {

inline bool is_separator(char32_t cp) {
  switch (cp) {
    case U' ': case U'\t': case U'\n': case U'\r': case U'\v': case U'\f':
    case 0x00A0: case 0x1680: case 0x2028: case 0x2029: case 0x202F:
    case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

}  // namespace detail

/// Splits on whitespace, strips punctuation (P*) and decimal digits (Nd),
/// drops empty residues and folds Latin-script capitals to lowercase.
inline std::vector<std::string> tokenize(std::string_view text,
                                         const TokenizeOptions& opts = {}) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const char32_t cp = detail::next_code_point(text, pos);
    if (detail::is_separator(cp)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      continue;
    }
    if (detail::is_punctuation(cp) || detail::is_decimal_digit(cp)) continue;
    detail::append_utf8(current, opts.fold_case ? detail::fold_latin(cp) : cp);
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// ---------------------------------------------------------------------------
// Labelling

struct RawReview {
  std::string text;
  double rating = 0.0;
};

/// Maps a rating scale onto polarity. `step` > 0 restricts ratings to
/// scale_min + n*step.
struct LabelScheme {
  std::string name;
  double scale_min = 1.0;
  double scale_max = 10.0;
  double step = 1.0;
  double negative_max = 4.0;
  double positive_min = 7.0;

  static LabelScheme imdb() { return {"imdb", 1.0, 10.0, 1.0, 4.0, 7.0}; }
  static LabelScheme watcha() { return {"watcha", 0.5, 5.0, 0.5, 2.0, 5.0}; }
  static LabelScheme generic(double lo, double hi, double negative_max, double positive_min,
                             double step = 0.0) {
    if (!(lo <= negative_max && negative_max < positive_min && positive_min <= hi)) {
      throw ConfigError("generic label scheme needs min <= neg_max < pos_min <= max");
    }
    return {"generic", lo, hi, step, negative_max, positive_min};
  }

  static LabelScheme by_name(std::string_view name) {
    if (name == "imdb") return imdb();
    if (name == "watcha") return watcha();
    throw ConfigError("unknown label scheme '" + std::string(name) + "'");
  }

  bool in_scale(double rating) const {
    if (!std::isfinite(rating) || rating < scale_min || rating > scale_max) return false;
    if (step <= 0.0) return true;
    const double n = (rating - scale_min) / step;
    return std::abs(n - std::round(n)) < 1e-9;
  }
};

inline Label label_from_rating(double rating, const LabelScheme& scheme) {
  if (!scheme.in_scale(rating)) {
    std::ostringstream msg;
    msg << "rating " << rating << " is outside the " << scheme.name << " scale";
    throw DataError(msg.str());
  }
  if (rating <= scheme.negative_max) return Label::Negative;
  if (rating >= scheme.positive_min) return Label::Positive;
  return Label::Excluded;
}

// ---------------------------------------------------------------------------
// Vocabulary

/// Token <-> id map. Id 0 is the padding token, spelled as the empty string,
/// which tokenize() can never produce.
class Vocabulary {
 public:
  Vocabulary() : tokens_{std::string{}}, counts_{0} { index_.emplace(std::string{}, kPadId); }

  /// Ordering: descending frequency, ties by byte-wise lexicographic order.
  template <typename Range, typename Proj = std::identity>
  static Vocabulary build(const Range& sequences, Proj proj = {}) {
    std::map<std::string, std::uint64_t> counts;
    std::size_t n = 0;
    for (const auto& item : sequences) {
      ++n;
      for (const auto& tok : std::invoke(proj, item)) ++counts[tok];
    }
    if (n == 0 || counts.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    std::vector<std::pair<std::string, std::uint64_t>> entries(counts.begin(), counts.end());
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (auto& [tok, c] : entries) v.add(std::move(tok), c);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  /// Unknown tokens map to the padding id.
  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kPadId : it->second;
  }

  bool contains(std::string_view token) const {
    return !token.empty() && index_.count(std::string(token)) > 0;
  }

  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::uint64_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  /// UTF-8 lines `token<TAB>id<TAB>count`, padding first.
  void save(std::ostream& out) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      out << tokens_[i] << '\t' << i << '\t' << counts_[i] << '\n';
    }
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary " + path.string());
    save(out);
  }

  static Vocabulary load(std::istream& in) {
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
      if (t2 == std::string::npos) {
        throw DataError("vocabulary line " + std::to_string(lineno) + " is malformed");
      }
      std::string tok = line.substr(0, t1);
      const auto id = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
      const auto count = std::stoull(line.substr(t2 + 1));
      if (id != lineno - 1) throw DataError("vocabulary ids must be sequential from 0");
      if (id == 0) {
        if (!tok.empty()) throw DataError("vocabulary id 0 must be the padding token");
        continue;
      }
      if (tok.empty() || v.index_.count(tok)) throw DataError("duplicate or empty vocabulary token");
      v.add(std::move(tok), count);
    }
    return v;
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocabulary " + path.string());
    return load(in);
  }

  std::uint64_t hash() const {
    std::ostringstream out;
    save(out);
    const std::string s = out.str();
    return fnv1a64(s.data(), s.size());
  }

  std::vector<std::string> decode(const std::vector<TokenId>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (TokenId i : ids) out.push_back(token(i));
    return out;
  }

 private:
  void add(std::string tok, std::uint64_t count) {
    index_.emplace(tok, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(tok));
    counts_.push_back(count);
  }

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
};

/// First min(|tokens|, max_len) ids; out-of-vocabulary tokens become the pad id.
inline std::vector<TokenId> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                                   std::size_t max_len) {
  const std::size_t n = std::min(tokens.size(), max_len);
  std::vector<TokenId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = vocab.id(tokens[i]);
  return ids;
}

// ---------------------------------------------------------------------------
// Examples and splits

struct TokenizedExample {
  std::vector<std::string> tokens;
  Polarity label = Polarity::Negative;
};

/// `words` holds the token text for each id (same length), so attention
/// reports can show out-of-vocabulary words that encode to the pad id.
struct LabeledExample {
  std::vector<TokenId> ids;
  std::vector<std::string> words;
  Polarity label = Polarity::Negative;
};

template <typename Example>
struct CorpusSplit {
  std::vector<Example> train;
  std::vector<Example> test;
  std::uint64_t seed = 0;
};

/// Tokenizes and labels reviews; excluded ratings and reviews with no tokens
/// left are dropped.
inline std::vector<TokenizedExample> label_reviews(const std::vector<RawReview>& reviews,
                                                   const LabelScheme& scheme,
                                                   const TokenizeOptions& opts = {}) {
  std::vector<TokenizedExample> out;
  for (const auto& r : reviews) {
    const Label l = label_from_rating(r.rating, scheme);
    if (l == Label::Excluded) continue;
    auto toks = tokenize(r.text, opts);
    if (toks.empty()) continue;
    out.push_back({std::move(toks), l == Label::Positive ? Polarity::Positive : Polarity::Negative});
  }
  return out;
}

/// Stratified split: each class contributes round(ratio * n_class) training
/// examples. Both halves keep the per-class shuffled order, classes interleaved
/// Negative first.
template <typename Example>
CorpusSplit<Example> split(const std::vector<Example>& examples, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < examples.size(); ++i) {
    by_class[static_cast<int>(examples[i].label)].push_back(i);
  }
  CorpusSplit<Example> out;
  out.seed = seed;
  for (int c = 0; c < 2; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) {
      throw DataError(std::string("class ") + polarity_name(static_cast<Polarity>(c)) +
                      " has fewer than 2 examples");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<std::size_t>(idx));
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (k < n_train ? out.train : out.test).push_back(examples[idx[k]]);
    }
  }
  return out;
}

inline LabeledExample encode_example(const TokenizedExample& ex, const Vocabulary& vocab,
                                     std::size_t max_len) {
  LabeledExample out;
  out.ids = encode(ex.tokens, vocab, max_len);
  out.words.assign(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(out.ids.size()));
  out.label = ex.label;
  return out;
}

inline std::vector<LabeledExample> encode_all(const std::vector<TokenizedExample>& examples,
                                              const Vocabulary& vocab, std::size_t max_len) {
  std::vector<LabeledExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode_example(ex, vocab, max_len));
  return out;
}

inline Vocabulary build_vocab(const std::vector<TokenizedExample>& examples) {
  return Vocabulary::build(examples, [](const TokenizedExample& ex) -> const auto& { return ex.tokens; });
}

/// Keeps the first `max_len` ids and words of each example.
inline std::vector<LabeledExample> truncate(std::vector<LabeledExample> examples, std::size_t max_len) {
  for (auto& ex : examples) {
    if (ex.ids.size() > max_len) ex.ids.resize(max_len);
    if (ex.words.size() > max_len) ex.words.resize(max_len);
  }
  return examples;
}

/// One example per line: `label<TAB>id id ...<TAB>word word ...`.
inline void write_examples(std::ostream& out, const std::vector<LabeledExample>& examples) {
  for (const auto& ex : examples) {
    out << polarity_name(ex.label) << '\t';
    for (std::size_t i = 0; i < ex.ids.size(); ++i) out << (i ? " " : "") << ex.ids[i];
    out << '\t';
    for (std::size_t i = 0; i < ex.words.size(); ++i) out << (i ? " " : "") << ex.words[i];
    out << '\n';
  }
}

inline std::vector<LabeledExample> read_examples(std::istream& in) {
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw DataError("example line " + std::to_string(lineno) + " is malformed");
    LabeledExample ex;
    const std::string label = line.substr(0, t1);
    if (label == "positive") {
      ex.label = Polarity::Positive;
    } else if (label == "negative") {
      ex.label = Polarity::Negative;
    } else {
      throw DataError("unknown label '" + label + "' on example line " + std::to_string(lineno));
    }
    std::istringstream ids(line.substr(t1 + 1, t2 - t1 - 1));
    for (TokenId id; ids >> id;) ex.ids.push_back(id);
    std::istringstream words(line.substr(t2 + 1));
    for (std::string w; words >> w;) ex.words.push_back(std::move(w));
    if (ex.ids.empty() || ex.ids.size() != ex.words.size()) {
      throw DataError("example line " + std::to_string(lineno) + " has mismatched ids and words");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Readers

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

inline bool blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\v\f") == std::string_view::npos;
}

}  // namespace detail

/// Reads `<root>/<part>/{pos,neg}/<id>_<rating>.txt`. `parts` defaults to
/// both train and test. Files are visited in sorted path order.
inline std::vector<RawReview> read_imdb(const std::filesystem::path& root,
                                        std::vector<std::string> parts = {"train", "test"}) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& part : parts) {
    for (const char* cls : {"neg", "pos"}) {
      const fs::path dir = root / part / cls;
      if (!fs::is_directory(dir)) continue;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
      }
    }
  }
  if (files.empty()) throw DataError("no IMDB review files under " + root.string());
  std::sort(files.begin(), files.end());
  std::vector<RawReview> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    const auto us = stem.rfind('_');
    if (us == std::string::npos) throw DataError("IMDB file name lacks a rating: " + f.string());
    RawReview r;
    try {
      r.rating = std::stod(stem.substr(us + 1));
    } catch (const std::exception&) {
      throw DataError("IMDB file name lacks a rating: " + f.string());
    }
    r.text = detail::read_file(f);
    detail::replace_all(r.text, "<br />", " ");
    if (detail::blank(r.text)) throw DataError("empty review text in " + f.string());
    out.push_back(std::move(r));
  }
  return out;
}

/// RFC 4180 records. Quoted fields may contain delimiters, newlines and
/// doubled quotes.
inline std::vector<std::vector<std::string>> parse_delimited(std::string_view data, char delim) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t i = 0;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  while (i < data.size()) {
    const char c = data[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          i += 2;
          continue;
        }
        quoted = false;
      } else {
        field.push_back(c);
      }
      ++i;
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == delim) {
      end_field();
    } else if (c == '\n' || c == '\r') {
      end_row();
      if (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') ++i;
    } else {
      field.push_back(c);
      field_started = true;
    }
    ++i;
  }
  if (quoted) throw DataError("unterminated quoted field");
  if (field_started || !row.empty()) end_row();
  return rows;
}

/// Generic `text,rating` table. Delimiter 0 auto-detects tab vs comma from
/// the header line.
inline std::vector<RawReview> read_table(const std::filesystem::path& path, char delim = 0) {
  std::string data = detail::read_file(path);
  if (data.size() >= 3 && data.compare(0, 3, "\xEF\xBB\xBF") == 0) data.erase(0, 3);
  if (delim == 0) {
    const std::string_view header(data.data(), std::min(data.find('\n'), data.size()));
    delim = header.find('\t') != std::string_view::npos ? '\t' : ',';
  }
  const auto rows = parse_delimited(data, delim);
  if (rows.empty()) throw DataError("empty dataset " + path.string());
  std::optional<std::size_t> text_col, rating_col;
  for (std::size_t c = 0; c < rows[0].size(); ++c) {
    if (rows[0][c] == "text") text_col = c;
    if (rows[0][c] == "rating") rating_col = c;
  }
  if (!text_col || !rating_col) throw DataError("header must contain 'text' and 'rating' columns");
  std::vector<RawReview> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = path.string() + " record " + std::to_string(r);
    if (row.size() <= std::max(*text_col, *rating_col)) throw DataError("missing column in " + where);
    if (detail::blank(row[*text_col])) throw DataError("empty review text in " + where);
    RawReview rev;
    rev.text = row[*text_col];
    std::size_t used = 0;
    try {
      rev.rating = std::stod(row[*rating_col], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0) throw DataError("unparsable rating in " + where);
    out.push_back(std::move(rev));
  }
  return out;
}

}  // namespace cam2
