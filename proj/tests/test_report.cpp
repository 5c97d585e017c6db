#include <gtest/gtest.h>

#include <cstring>

#include "support.hpp"

using namespace cam2;

namespace {

AttentionResult result(std::vector<std::string> words, std::vector<double> raw, std::size_t predicted,
                       std::size_t d = 0) {
  AttentionResult r;
  r.real_words = words.size();
  r.predicted_class = r.target_class = predicted;
  d = std::max(d, words.size());
  words.resize(d);
  raw.resize(d, 0.0);
  r.words = words;
  r.raw = raw;
  r.normalized = normalize(r.raw, r.real_words);
  return r;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

// Streaming tag-balance check: every non-void open tag closes in LIFO order.
bool balanced(const std::string& html, std::string* why) {
  static const std::set<std::string> void_tags = {"meta", "br", "hr", "img", "link", "input"};
  std::vector<std::string> stack;
  for (std::size_t i = 0; i < html.size(); ++i) {
    if (html[i] == '>') {
      *why = "stray '>' at " + std::to_string(i);
      return false;
    }
    if (html[i] != '<') continue;
    const auto close = html.find('>', i);
    if (close == std::string::npos) {
      *why = "unterminated tag";
      return false;
    }
    const std::string tag = html.substr(i + 1, close - i - 1);
    i = close;
    if (tag.empty() || tag.find('<') != std::string::npos) {
      *why = "malformed tag";
      return false;
    }
    if (tag[0] == '!') continue;
    const bool closing = tag[0] == '/';
    std::string name = tag.substr(closing ? 1 : 0);
    name = name.substr(0, name.find_first_of(" \t\n/"));
    if (closing) {
      if (stack.empty() || stack.back() != name) {
        *why = "unexpected </" + name + ">";
        return false;
      }
      stack.pop_back();
    } else if (!void_tags.count(name)) {
      stack.push_back(name);
    }
  }
  if (!stack.empty()) *why = "unclosed <" + stack.back() + ">";
  return stack.empty();
}

bool valid_utf8(const std::string& s) {
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    const std::size_t n = c < 0x80 ? 1 : (c >> 5) == 6 ? 2 : (c >> 4) == 14 ? 3 : (c >> 3) == 30 ? 4 : 0;
    if (n == 0 || i + n > s.size()) return false;
    for (std::size_t k = 1; k < n; ++k)
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    i += n;
  }
  return true;
}

// Text content of each <p>, tags removed and entities decoded.
std::vector<std::string> paragraph_text(const std::string& html) {
  std::vector<std::string> out;
  for (auto p = html.find("<p "); p != std::string::npos; p = html.find("<p ", p + 1)) {
    const auto start = html.find('>', p) + 1;
    const auto end = html.find("</p>", start);
    std::string text;
    bool in_tag = false;
    for (auto i = start; i < end; ++i) {
      if (html[i] == '<') in_tag = true;
      else if (html[i] == '>') in_tag = false;
      else if (!in_tag) text += html[i];
    }
    for (auto [ent, ch] : {std::pair{"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&#39;", "'"}, {"&amp;", "&"}}) {
      for (auto q = text.find(ent); q != std::string::npos; q = text.find(ent, q + 1)) text.replace(q, std::strlen(ent), ch);
    }
    out.push_back(text);
  }
  return out;
}

}  // namespace

TEST(Render, EmptySelectionHasNoSpans) {
  HighlightDoc doc;
  doc.tokens = {"a", "quiet", "film"};
  doc.top = doc.bottom = {false, false, false};
  doc.scores = {0, 0, 0};
  EXPECT_EQ(count(render_highlight(doc, Format::Html), "<span"), 0u);
  EXPECT_EQ(count(render_highlight(doc, Format::Ansi), "\x1b["), 0u);
}

TEST(Render, OneSelectedTokenOneSpan) {
  const auto r = result({"this", "film", "is", "wonderful", "and", "moving", "to", "watch", "every", "time"},
                        {0, 0, 0, 5, 0, 1, 0, 0, 0, 0}, 1);
  const auto doc = make_highlight(r, 0.10);
  const auto html = render_highlight(doc, Format::Html);
  EXPECT_EQ(count(html, "<span"), 1u);
  EXPECT_NE(html.find(std::string("background-color:") + std::string(kPositiveHtml) + "\">wonderful</span>"),
            std::string::npos);
  const auto ansi = render_highlight(doc, Format::Ansi);
  EXPECT_EQ(count(ansi, std::string(kPositiveAnsi)), 1u);
  EXPECT_NE(ansi.find(std::string(kPositiveAnsi) + "wonderful" + std::string(kAnsiReset)), std::string::npos);
}

TEST(Render, ColourFollowsPredictedClass) {
  const auto r = result({"dull", "plot"}, {3, 1}, 0);
  const auto html = render_highlight(make_highlight(r, 0.5), Format::Html);
  EXPECT_NE(html.find(std::string(kNegativeHtml) + "\">dull<"), std::string::npos);
  EXPECT_EQ(html.find(kPositiveHtml), std::string::npos);

  const auto mixed = render_highlight(make_highlight(r, 0.5, true), Format::Html);
  EXPECT_NE(mixed.find(std::string(kPositiveHtml) + "\">plot<"), std::string::npos);
}

TEST(Render, DeterministicBytes) {
  const auto r = result({"a", "b", "c", "d"}, {1, 4, 2, 3}, 1, 8);
  const auto doc = make_highlight(r, 0.5, true);
  for (auto f : {Format::Html, Format::Ansi, Format::Json}) EXPECT_EQ(render_highlight(doc, f), render_highlight(doc, f));
}

TEST(Render, JsonFlagsVerbatim) {
  const auto r = result({"x", "y", "z"}, {1, 3, 2}, 1);
  const auto doc = make_highlight(r, 0.34, true);
  const auto j = nlohmann::json::parse(render_highlight(doc, Format::Json));
  EXPECT_EQ(j["predicted"], "positive");
  ASSERT_EQ(j["tokens"].size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(j["tokens"][i]["token"], doc.tokens[i]);
    EXPECT_EQ(j["tokens"][i]["pos"], i + 1);
    EXPECT_EQ(j["tokens"][i]["top"], static_cast<bool>(doc.top[i]));
    EXPECT_EQ(j["tokens"][i]["bottom"], static_cast<bool>(doc.bottom[i]));
  }
  EXPECT_TRUE(j["tokens"][1]["top"]);
  EXPECT_TRUE(j["tokens"][0]["bottom"]);
}

TEST(Render, HtmlWellFormedAndTokensPreserved) {
  std::vector<AttentionResult> rs = {
      result({"정말", "재미있는", "영화", "였다"}, {0.5, 3, 1, 0.2}, 1, 6),
      result({"<b>", "a&b", "\"quoted\"", "it's", "최악"}, {2, -1, 0, 0, 4}, 0),
      result({"solo"}, {0}, 1, 3),
  };
  std::vector<HighlightDoc> docs;
  for (const auto& r : rs) docs.push_back(make_highlight(r, 0.3, true));
  const auto html = render_html(docs);
  std::string why;
  EXPECT_TRUE(balanced(html, &why)) << why;
  EXPECT_TRUE(valid_utf8(html));
  EXPECT_NE(html.find("<meta charset=\"utf-8\">"), std::string::npos);
  const auto texts = paragraph_text(html);
  ASSERT_EQ(texts.size(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::string joined;
    for (std::size_t t = 0; t < docs[i].tokens.size(); ++t) joined += (t ? " " : "") + docs[i].tokens[t];
    EXPECT_EQ(texts[i], joined);
  }
}

TEST(Render, TopAndBottomDisjoint) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + rng.below(12);
    std::vector<std::string> words;
    std::vector<double> raw;
    for (std::size_t i = 0; i < n; ++i) {
      words.push_back("w" + std::to_string(i));
      raw.push_back(static_cast<double>(rng.below(4)));
    }
    const auto doc = make_highlight(result(words, raw, trial % 2), 0.1 + 0.9 * rng.uniform(), true);
    ASSERT_EQ(doc.top.size(), doc.tokens.size());
    ASSERT_EQ(doc.bottom.size(), doc.tokens.size());
    for (std::size_t i = 0; i < n; ++i) EXPECT_FALSE(doc.top[i] && doc.bottom[i]);
  }
}

TEST(Render, UnknownFormat) {
  EXPECT_EQ(parse_format("html"), Format::Html);
  EXPECT_EQ(parse_format("ansi"), Format::Ansi);
  EXPECT_EQ(parse_format("json"), Format::Json);
  EXPECT_THROW(parse_format("pdf"), ConfigError);
}

TEST(TopWords, ShortSentenceCountsEveryWord) {
  const auto t = aggregate_top_words({result({"fine", "little", "film"}, {1, 2, 3}, 1, 10)}, 5);
  ASSERT_EQ(t.ranked[1].size(), 3u);
  for (const auto& [tok, n] : t.ranked[1]) EXPECT_EQ(n, 1u);
  EXPECT_TRUE(t.ranked[0].empty());
  EXPECT_EQ(t.ranked[1][0].first, "film");  // equal counts rank lexicographically
}

TEST(TopWords, RepeatedTokenCounted) {
  const auto t = aggregate_top_words({result({"great", "cast"}, {5, 1}, 1), result({"a", "great", "one"}, {0, 9, 1}, 1)}, 1);
  ASSERT_EQ(t.ranked[1].size(), 1u);
  EXPECT_EQ(t.ranked[1][0], (std::pair<std::string, std::size_t>{"great", 2}));
}

TEST(TopWords, TiesTakeEarlierPosition) {
  const auto t = aggregate_top_words({result({"zeta", "alpha", "beta"}, {2, 2, 2}, 0)}, 2);
  ASSERT_EQ(t.ranked[0].size(), 2u);
  EXPECT_EQ(t.ranked[0][0].first, "alpha");
  EXPECT_EQ(t.ranked[0][1].first, "zeta");
}

TEST(TopWords, OrderInvariantAndRanked) {
  Rng rng(5);
  std::vector<AttentionResult> rs;
  for (int i = 0; i < 60; ++i) {
    std::vector<std::string> w;
    std::vector<double> raw;
    const auto n = 1 + rng.below(9);
    for (std::size_t p = 0; p < n; ++p) {
      w.push_back(test::filler_words()[rng.below(8)]);
      raw.push_back(rng.uniform(-1.0, 1.0));
    }
    rs.push_back(result(w, raw, rng.below(2), 12));
  }
  const auto a = aggregate_top_words(rs, 3);
  auto shuffled = rs;
  rng.shuffle(std::span<AttentionResult>(shuffled));
  const auto b = aggregate_top_words(shuffled, 3);
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(a.ranked[c], b.ranked[c]);
    for (std::size_t i = 0; i < a.ranked[c].size(); ++i) {
      EXPECT_GT(a.ranked[c][i].second, 0u);
      if (i > 0) {
        EXPECT_GE(a.ranked[c][i - 1].second, a.ranked[c][i].second);
      }
    }
  }
}

TEST(TopWords, StopWordFilterIsOptional) {
  const auto r = result({"the", "plot", "and", "pacing"}, {9, 1, 8, 2}, 1);
  const auto plain = aggregate_top_words({r}, 2);
  EXPECT_EQ(plain.ranked[1][0].first, "and");
  const auto filtered = aggregate_top_words({r}, 2, true);
  EXPECT_EQ(filtered.ranked[1][0].first, "pacing");
  EXPECT_EQ(filtered.ranked[1][1].first, "plot");
}

TEST(TopWords, Errors) {
  EXPECT_THROW(aggregate_top_words({}, 5), DataError);
  EXPECT_THROW(aggregate_top_words({result({"a"}, {1}, 1)}, 0), ConfigError);
}

TEST(TopWords, CsvParsesBack) {
  const auto t = aggregate_top_words({result({"great", "fun", "film,\"really\""}, {3, 2, 1}, 1),
                                      result({"awful", "boring"}, {2, 1}, 0)},
                                     5);
  const auto csv = top_words_csv(t);
  const auto rows = parse_delimited(csv, ',');
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"rank", "positive", "positive_count", "negative", "negative_count"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"1", "film,\"really\"", "1", "awful", "1"}));
  EXPECT_EQ(rows[3], (std::vector<std::string>{"3", "great", "1", "", ""}));
  const auto limited = top_words_csv(t, 1);
  EXPECT_EQ(std::count(limited.begin(), limited.end(), '\n'), 2);
}

TEST(AccuracyTableTest, SingleRow) {
  EvalReport r;
  r.accuracy = 0.5;
  const auto t = AccuracyTable::from({{InputMode::Rand, r}});
  EXPECT_EQ(t.csv(), "model,accuracy\nCNN-Rand,0.5000\n");
  EXPECT_NE(t.text().find("0.5000"), std::string::npos);
}

TEST(AccuracyTableTest, FixedOrderAndParseBack) {
  std::vector<std::pair<InputMode, EvalReport>> reps;
  const std::vector<InputMode> scrambled = {InputMode::FourCh, InputMode::Static, InputMode::Rand, InputMode::TwoCh,
                                            InputMode::NonStatic};
  for (std::size_t i = 0; i < scrambled.size(); ++i) {
    EvalReport r;
    r.accuracy = 0.7 + 0.01234 * static_cast<double>(i);
    reps.emplace_back(scrambled[i], r);
  }
  const auto t = AccuracyTable::from(reps);
  const auto rows = parse_delimited(t.csv(), ',');
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t i = 0; i < std::size(kAllModes); ++i) {
    EXPECT_EQ(rows[i + 1][0], mode_label(kAllModes[i]));
    const auto it = std::find_if(reps.begin(), reps.end(), [&](const auto& p) { return p.first == kAllModes[i]; });
    EXPECT_NEAR(std::stod(rows[i + 1][1]), it->second.accuracy, 5e-5);
  }
  const auto text = t.text();
  EXPECT_LT(text.find("CNN-Rand"), text.find("CNN-Static"));
  EXPECT_LT(text.find("CNN-Static"), text.find("CNN-Non-Static"));
  EXPECT_LT(text.find("CNN-2channel"), text.find("CNN-4channel"));
}
