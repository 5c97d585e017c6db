#pragma once

// Configuration schema and resolution shared by the command-line tool and its tests.

#include <map>
#include <set>
#include <sstream>
#include <fstream>
#include <string>
#include <vector>

#include "cam2/error.hpp"

namespace cam2::cli {

inline constexpr const char* kDataDirEnv = "CAM2_DATA_DIR";

struct KeySpec {
  std::string name;
  std::string fallback;
  std::string help;
  std::set<std::string> commands;
  bool flag = false;
};

// Every configuration key, its built-in default and the commands using it.
inline const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"seed", "1", "seed for every random stream", {"prepare", "embed", "train"}},
      {"out", ".", "output directory", {"prepare", "embed", "train", "evaluate", "attend", "topwords", "table"}},
      {"dataset", "", "IMDB directory or text,rating CSV/TSV (relative paths also tried under $CAM2_DATA_DIR)", {"prepare"}},
      {"format", "auto", "dataset format: auto|imdb|table", {"prepare"}},
      {"delimiter", "auto", "table delimiter: auto|comma|tab", {"prepare"}},
      {"scheme", "imdb", "rating-to-label scheme: imdb|watcha|generic", {"prepare"}},
      {"scale-min", "1", "generic scheme: lowest rating", {"prepare"}},
      {"scale-max", "10", "generic scheme: highest rating", {"prepare"}},
      {"rating-step", "0", "generic scheme: rating granularity (0 = continuous)", {"prepare"}},
      {"neg-max", "4", "generic scheme: ratings <= this are negative", {"prepare"}},
      {"pos-min", "7", "generic scheme: ratings >= this are positive", {"prepare"}},
      {"split-ratio", "0.7", "training fraction of each class", {"prepare"}},
      {"max-per-class", "0", "keep at most this many examples per class (0 = all)", {"prepare"}},
      {"keep-case", "false", "do not lowercase Latin letters", {"prepare", "attend"}, true},
      {"corpus", ".", "prepared corpus directory", {"embed", "train", "evaluate", "attend", "topwords"}},
      {"mode", "rand", "input mode: rand|static|nonstatic|2ch|4ch", {"embed"}},
      {"dim", "100", "embedding dimension k", {"embed"}},
      {"window", "3", "embedding context window", {"embed"}},
      {"negatives", "5", "negative samples per context pair", {"embed"}},
      {"embed-epochs", "5", "skip-gram and subword epochs", {"embed"}},
      {"embed-lr", "0.025", "skip-gram and subword initial learning rate", {"embed"}},
      {"ngram-min", "3", "subword: shortest character n-gram", {"embed"}},
      {"ngram-max", "6", "subword: longest character n-gram", {"embed"}},
      {"bucket", "200000", "subword: n-gram hash buckets", {"embed"}},
      {"x-max", "100", "co-occurrence weighting cutoff", {"embed"}},
      {"alpha", "0.75", "co-occurrence weighting exponent", {"embed"}},
      {"glove-epochs", "25", "co-occurrence factorization epochs", {"embed"}},
      {"glove-lr", "0.05", "co-occurrence factorization AdaGrad rate", {"embed"}},
      {"export-text", "false", "also write each channel as text", {"embed"}, true},
      {"channels", "", "directory holding embed output (default: corpus)", {"train"}},
      {"max-len", "100", "document length d in words", {"train"}},
      {"heights", "3,4,5", "filter heights", {"train"}},
      {"filters", "128", "filters per height", {"train"}},
      {"batch", "64", "mini-batch size", {"train"}},
      {"epochs", "10", "training epochs", {"train"}},
      {"optimizer", "adam", "adam|sgd", {"train"}},
      {"lr", "0.001", "learning rate", {"train"}},
      {"beta1", "0.9", "Adam beta1", {"train"}},
      {"beta2", "0.999", "Adam beta2", {"train"}},
      {"eps", "1e-8", "Adam epsilon", {"train"}},
      {"lambda", "0.1", "L2 regularization strength", {"train"}},
      {"dropout", "0.5", "dropout rate on the pooled features", {"train"}},
      {"eval-every", "1", "evaluate on the test split every N epochs", {"train"}},
      {"resume", "false", "continue from <out>/state.bin when present", {"train"}, true},
      {"checkpoint", "model.ckpt", "model checkpoint", {"evaluate", "attend", "topwords"}},
      {"split", "test", "which prepared split to use: train|test", {"evaluate", "topwords"}},
      {"sentence", "", "a single sentence to attend", {"attend"}},
      {"input", "", "file with one sentence per line", {"attend"}},
      {"class", "predicted", "class to score: predicted|positive|negative", {"attend"}},
      {"fraction", "0.1", "fraction of words highlighted", {"attend"}},
      {"output-format", "html,json", "comma list of html|json|ansi", {"attend"}},
      {"mixed", "false", "also highlight the lowest-scored words in the opposite colour", {"attend"}, true},
      {"k", "5", "top words taken per sentence", {"topwords"}},
      {"rows", "0", "rows written to the table (0 = all)", {"topwords"}},
      {"stop-words", "false", "drop common English function words", {"topwords"}, true},
      {"evals", "", "comma list of eval.json files", {"table"}},
  };
  return keys;
}

inline std::string key_listing() {
  std::ostringstream out;
  out << "Configuration keys (flag --<key> or `key=value` line in --config; flags > config file > defaults):\n";
  for (const auto& k : schema()) {
    out << "  " << k.name << " [" << (k.fallback.empty() ? "\"\"" : k.fallback) << "]  " << k.help << "  (";
    bool first = true;
    for (const auto& c : k.commands) {
      out << (first ? "" : ",") << c;
      first = false;
    }
    out << ")\n";
  }
  out << "Environment: " << kDataDirEnv << " is the default data directory.\n";
  out << "Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence.\n";
  return out.str();
}

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cam2::ConfigError("cannot read config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw cam2::ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    bool known = false;
    for (const auto& k : schema()) known = known || k.name == key;
    if (!known) throw cam2::ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

/// Fully resolved configuration for one command.
class RunConfig {
 public:
  explicit RunConfig(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw cam2::ConfigError("key '" + key + "' is not available here");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw cam2::ConfigError("key '" + key + "' expects a number, got '" + s + "'");
  }

  std::size_t count(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used == s.size() && s.find('-') == std::string::npos) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw cam2::ConfigError("key '" + key + "' expects a non-negative integer, got '" + s + "'");
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw cam2::ConfigError("key '" + key + "' expects true or false");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) out.push_back(item);
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Value for every key used by `command`: defaults, then the config file,
/// then explicitly given flags.
inline std::map<std::string, std::string> resolve(const std::string& command,
                                                  const std::map<std::string, std::string>& file_values,
                                                  const std::map<std::string, std::string>& flag_values) {
  std::map<std::string, std::string> out;
  for (const auto& key : schema()) {
    if (!key.commands.count(command)) continue;
    std::string v = key.fallback;
    if (auto it = file_values.find(key.name); it != file_values.end()) v = it->second;
    if (auto it = flag_values.find(key.name); it != flag_values.end()) v = it->second;
    out[key.name] = v;
  }
  return out;
}

}  // namespace cam2::cli
