// Command-line pipeline: prepare -> embed -> train -> evaluate / attend / topwords / table.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cam2/cam2.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using cam2::cli::RunConfig;
using cam2::cli::schema;
using cam2::cli::kDataDirEnv;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cam2::DataError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw cam2::DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw cam2::DataError(path.string() + ": " + e.what());
  }
}

std::vector<cam2::LabeledExample> read_split(const fs::path& corpus, const std::string& which) {
  if (which != "train" && which != "test") throw cam2::ConfigError("split must be train or test");
  const fs::path path = corpus / (which + ".tsv");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cam2::DataError("missing prepared split " + path.string() + " (run prepare first)");
  return cam2::read_examples(in);
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path out = cfg.str("out");
  fs::create_directories(out);
  return out;
}

void log_seed(std::uint64_t seed) { std::cerr << "seed=" << seed << '\n'; }

// ---------------------------------------------------------------------------

int cmd_prepare(const RunConfig& cfg) {
  const auto seed = static_cast<std::uint64_t>(cfg.count("seed"));
  log_seed(seed);
  fs::path dataset = cfg.str("dataset");
  if (dataset.empty()) throw cam2::ConfigError("prepare needs --dataset");
  if (!fs::exists(dataset) && dataset.is_relative()) {
    if (const char* dir = std::getenv(kDataDirEnv); dir && *dir) dataset = fs::path(dir) / dataset;
  }
  if (!fs::exists(dataset)) throw cam2::DataError("dataset not found: " + dataset.string());

  std::string format = cfg.str("format");
  if (format == "auto") format = fs::is_directory(dataset) ? "imdb" : "table";
  std::vector<cam2::RawReview> reviews;
  if (format == "imdb") {
    reviews = cam2::read_imdb(dataset);
  } else if (format == "table") {
    const auto& d = cfg.str("delimiter");
    char delim = 0;
    if (d == "comma") delim = ',';
    else if (d == "tab") delim = '\t';
    else if (d != "auto") throw cam2::ConfigError("delimiter must be auto, comma or tab");
    reviews = cam2::read_table(dataset, delim);
  } else {
    throw cam2::ConfigError("unknown dataset format '" + format + "'");
  }

  const auto& scheme_name = cfg.str("scheme");
  const cam2::LabelScheme scheme =
      scheme_name == "generic"
          ? cam2::LabelScheme::generic(cfg.real("scale-min"), cfg.real("scale-max"), cfg.real("neg-max"),
                                       cfg.real("pos-min"), cfg.real("rating-step"))
          : cam2::LabelScheme::by_name(scheme_name);
  cam2::TokenizeOptions topts;
  topts.fold_case = !cfg.flag("keep-case");
  auto labeled = cam2::label_reviews(reviews, scheme, topts);
  if (labeled.empty()) throw cam2::DataError("no labeled examples in " + dataset.string());

  if (const auto cap = cfg.count("max-per-class"); cap > 0) {
    std::vector<cam2::TokenizedExample> kept;
    for (int c = 0; c < 2; ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < labeled.size(); ++i)
        if (static_cast<int>(labeled[i].label) == c) idx.push_back(i);
      cam2::Rng rng(cam2::derive_seed(seed, 100 + static_cast<std::uint64_t>(c)));
      rng.shuffle(std::span<std::size_t>(idx));
      if (idx.size() > cap) idx.resize(cap);
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) kept.push_back(labeled[i]);
    }
    labeled = std::move(kept);
  }

  const auto parts = cam2::split(labeled, cfg.real("split-ratio"), seed);
  const auto vocab = cam2::build_vocab(parts.train);
  const auto none = std::numeric_limits<std::size_t>::max();
  const auto train = cam2::encode_all(parts.train, vocab, none);
  const auto test = cam2::encode_all(parts.test, vocab, none);

  const fs::path out = out_dir(cfg);
  vocab.save(out / "vocab.tsv");
  for (const auto& [name, part] : {std::pair{"train.tsv", &train}, std::pair{"test.tsv", &test}}) {
    std::ofstream f(out / name, std::ios::binary);
    if (!f) throw cam2::DataError("cannot write " + (out / name).string());
    cam2::write_examples(f, *part);
  }
  auto class_counts = [](const std::vector<cam2::LabeledExample>& v) {
    std::size_t n[2] = {0, 0};
    for (const auto& e : v) ++n[static_cast<int>(e.label)];
    return json{{"negative", n[0]}, {"positive", n[1]}};
  };
  json summary;
  summary["reviews"] = reviews.size();
  summary["labeled"] = labeled.size();
  summary["train"] = class_counts(train);
  summary["test"] = class_counts(test);
  summary["vocab_size"] = vocab.size() - 1;
  summary["seed"] = seed;
  summary["scheme"] = scheme.name;
  summary["keep_case"] = !topts.fold_case;
  write_text(out / "prepare.json", summary.dump(2) + "\n");
  std::cout << "reviews read      " << reviews.size() << "\n"
            << "labeled           " << labeled.size() << " (excluded " << reviews.size() - labeled.size() << ")\n"
            << "train neg/pos     " << summary["train"]["negative"] << " / " << summary["train"]["positive"] << "\n"
            << "test  neg/pos     " << summary["test"]["negative"] << " / " << summary["test"]["positive"] << "\n"
            << "vocabulary tokens " << vocab.size() - 1 << "\n";
  return 0;
}

int cmd_embed(const RunConfig& cfg) {
  const auto seed = static_cast<std::uint64_t>(cfg.count("seed"));
  log_seed(seed);
  const fs::path corpus = cfg.str("corpus");
  const auto vocab = cam2::Vocabulary::load(corpus / "vocab.tsv");
  const auto train = read_split(corpus, "train");
  cam2::Sentences sentences;
  for (const auto& ex : train) sentences.push_back(ex.ids);

  const auto mode = cam2::parse_mode(cfg.str("mode"));
  const std::size_t dim = cfg.count("dim");
  cam2::SkipGramConfig sg;
  sg.dim = dim;
  sg.window = cfg.count("window");
  sg.negatives = cfg.count("negatives");
  sg.epochs = cfg.count("embed-epochs");
  sg.lr = cfg.real("embed-lr");

  cam2::TrainedChannels trained;
  json losses = json::object();
  auto report = [&](const char* name, const cam2::TrainedEmbedding& t) {
    losses[name] = t.epoch_loss;
    std::cout << name << " loss per epoch:";
    for (double l : t.epoch_loss) std::cout << ' ' << l;
    std::cout << '\n';
  };
  for (auto src : cam2::required_sources(mode)) {
    switch (src) {
      case cam2::EmbeddingSource::Rand:
        trained.rand = cam2::init_random(vocab.size(), dim, cam2::derive_seed(seed, 10));
        break;
      case cam2::EmbeddingSource::SkipGram: {
        auto c = sg;
        c.seed = cam2::derive_seed(seed, 11);
        auto t = cam2::train_skipgram(sentences, vocab.size(), c);
        report("skipgram", t);
        trained.skipgram = std::move(t.channel);
        break;
      }
      case cam2::EmbeddingSource::CoocFactor: {
        cam2::CoocFactorConfig c;
        c.dim = dim;
        c.window = sg.window;
        c.x_max = cfg.real("x-max");
        c.alpha = cfg.real("alpha");
        c.epochs = cfg.count("glove-epochs");
        c.lr = cfg.real("glove-lr");
        c.seed = cam2::derive_seed(seed, 12);
        auto t = cam2::train_cooc_factor(sentences, vocab.size(), c);
        report("cooc", t);
        trained.cooc = std::move(t.channel);
        break;
      }
      case cam2::EmbeddingSource::Subword: {
        cam2::SubwordConfig c;
        c.skipgram = sg;
        c.skipgram.seed = cam2::derive_seed(seed, 13);
        c.ngram_min = cfg.count("ngram-min");
        c.ngram_max = cfg.count("ngram-max");
        c.bucket = cfg.count("bucket");
        auto t = cam2::train_subword(sentences, vocab, c);
        report("subword", t);
        trained.subword = std::move(t.channel);
        break;
      }
    }
  }
  const auto assembled = cam2::assemble(mode, trained);
  const fs::path out = out_dir(cfg);
  json meta;
  meta["mode"] = cam2::mode_name(mode);
  meta["dim"] = dim;
  meta["vocab_hash"] = vocab.hash();
  meta["channels"] = json::array();
  for (std::size_t i = 0; i < assembled.channels.size(); ++i) {
    const auto& ch = assembled.channels[i];
    const std::string file = "channel_" + std::to_string(i) + ".emb";
    cam2::save_channel(out / file, ch);
    if (cfg.flag("export-text")) {
      std::ofstream txt(out / ("channel_" + std::to_string(i) + ".txt"), std::ios::binary);
      cam2::export_text(txt, ch, vocab);
    }
    meta["channels"].push_back(
        {{"file", file}, {"source", cam2::source_name(ch.source)}, {"trainable", ch.trainable}, {"hash", ch.hash()}});
    std::cout << file << "  " << cam2::source_name(ch.source) << (ch.trainable ? "  trainable" : "  frozen") << '\n';
  }
  meta["loss"] = losses;
  write_text(out / "embed.json", meta.dump(2) + "\n");
  return 0;
}

void write_eval(const fs::path& path, const cam2::EvalReport& r, cam2::InputMode mode) {
  json j;
  j["mode"] = cam2::mode_name(mode);
  j["accuracy"] = r.accuracy;
  j["total"] = r.total;
  j["loss"] = r.loss;
  j["confusion"] = {{"true_negative", r.confusion[0][0]},
                    {"false_positive", r.confusion[0][1]},
                    {"false_negative", r.confusion[1][0]},
                    {"true_positive", r.confusion[1][1]}};
  j["precision"] = {{"negative", r.precision[0]}, {"positive", r.precision[1]}};
  j["recall"] = {{"negative", r.recall[0]}, {"positive", r.recall[1]}};
  write_text(path, j.dump(2) + "\n");
}

int cmd_train(const RunConfig& cfg) {
  const auto seed = static_cast<std::uint64_t>(cfg.count("seed"));
  log_seed(seed);
  const fs::path corpus = cfg.str("corpus");
  const fs::path channel_dir = cfg.str("channels").empty() ? corpus : fs::path(cfg.str("channels"));
  const auto vocab = cam2::Vocabulary::load(corpus / "vocab.tsv");
  const auto meta = read_json(channel_dir / "embed.json");
  if (meta.at("vocab_hash").get<std::uint64_t>() != vocab.hash()) {
    throw cam2::DataError("embedding channels were built for a different vocabulary");
  }
  cam2::ChannelConfig<float> channels;
  channels.mode = cam2::parse_mode(meta.at("mode").get<std::string>());
  for (const auto& c : meta.at("channels")) {
    channels.channels.push_back(cam2::load_channel(channel_dir / c.at("file").get<std::string>()));
  }

  cam2::ModelHyper hp;
  hp.max_len = cfg.count("max-len");
  hp.heights.clear();
  for (const auto& h : cfg.list("heights")) {
    try {
      hp.heights.push_back(std::stoul(h));
    } catch (const std::exception&) {
      throw cam2::ConfigError("bad filter height '" + h + "'");
    }
  }
  hp.filters = cfg.count("filters");

  cam2::TrainConfig tc;
  tc.batch_size = cfg.count("batch");
  tc.epochs = cfg.count("epochs");
  const auto& opt = cfg.str("optimizer");
  if (opt == "adam") tc.optimizer.kind = cam2::OptimizerKind::Adam;
  else if (opt == "sgd") tc.optimizer.kind = cam2::OptimizerKind::Sgd;
  else throw cam2::ConfigError("optimizer must be adam or sgd");
  tc.optimizer.lr = cfg.real("lr");
  tc.optimizer.beta1 = cfg.real("beta1");
  tc.optimizer.beta2 = cfg.real("beta2");
  tc.optimizer.eps = cfg.real("eps");
  tc.lambda = cfg.real("lambda");
  tc.keep = 1.0 - cfg.real("dropout");
  tc.eval_every = cfg.count("eval-every");
  tc.seed = cam2::derive_seed(seed, 30);
  tc.validate();

  const auto train = cam2::truncate(read_split(corpus, "train"), hp.max_len);
  const auto test = cam2::truncate(read_split(corpus, "test"), hp.max_len);

  std::cout << "mode=" << cam2::mode_name(channels.mode) << " batch=" << tc.batch_size
            << " dropout=" << cfg.real("dropout") << " lambda=" << tc.lambda << " heights=" << cfg.str("heights")
            << " filters=" << hp.filters << " max-len=" << hp.max_len << " optimizer=" << opt
            << " lr=" << tc.optimizer.lr << " epochs=" << tc.epochs << '\n';
  if (tc.optimizer.lr == 0.0) std::cerr << "warning: lr is 0, parameters will not change\n";

  const fs::path out = out_dir(cfg);
  const fs::path state_path = out / "state.bin";
  cam2::TrainState state;
  if (cfg.flag("resume") && fs::exists(state_path)) {
    std::uint64_t saved_hash = 0;
    state = cam2::load_state(state_path, tc, &saved_hash);
    if (saved_hash != vocab.hash()) throw cam2::DataError("saved state was built for a different vocabulary");
    std::cout << "resuming after epoch " << state.epochs_done << '\n';
  } else {
    state = cam2::TrainState::start(cam2::make_model(hp, channels, cam2::derive_seed(seed, 20)), tc);
  }
  std::vector<std::uint64_t> frozen_before;
  for (const auto& ch : state.model.channels) frozen_before.push_back(ch.trainable ? 0 : ch.hash());

  const auto vh = vocab.hash();
  auto persist = [&](const cam2::TrainState& s) {
    cam2::save_model(out / "last.ckpt", s.model, vh);
    cam2::save_model(out / "model.ckpt", s.best, vh);
    std::ostringstream hist;
    cam2::write_history_csv(hist, s.history);
    write_text(out / "history.csv", hist.str());
    cam2::save_state(state_path, const_cast<cam2::TrainState&>(s), vh);
    const auto& r = s.history.back();
    std::cout << "epoch " << r.epoch << "  train_loss " << r.train_loss;
    if (!std::isnan(r.test_acc)) std::cout << "  test_acc " << r.test_acc;
    std::cout << std::endl;
  };
  cam2::train_epochs(state, train, test, tc, persist);
  if (state.history.empty()) persist(state);

  for (std::size_t c = 0; c < state.model.channels.size(); ++c) {
    if (state.model.channels[c].trainable) continue;
    const bool same = state.model.channels[c].hash() == frozen_before[c];
    std::cout << "frozen channel " << c << " hash " << (same ? "unchanged" : "CHANGED") << '\n';
  }
  if (!test.empty()) {
    const auto rep = cam2::evaluate(state.best, test);
    write_eval(out / "eval.json", rep, state.best.mode);
    std::cout << "best test accuracy " << rep.accuracy << '\n';
  }
  return 0;
}

cam2::Model<float> load_checked(const RunConfig& cfg, const cam2::Vocabulary& vocab) {
  const auto loaded = cam2::load_model(cfg.str("checkpoint"));
  if (loaded.vocab_hash != vocab.hash()) throw cam2::DataError("checkpoint was trained with a different vocabulary");
  return loaded.model;
}

int cmd_evaluate(const RunConfig& cfg) {
  const fs::path corpus = cfg.str("corpus");
  const auto vocab = cam2::Vocabulary::load(corpus / "vocab.tsv");
  const auto model = load_checked(cfg, vocab);
  const auto examples = cam2::truncate(read_split(corpus, cfg.str("split")), model.hyper.max_len);
  const auto rep = cam2::evaluate(model, examples);
  write_eval(out_dir(cfg) / "eval.json", rep, model.mode);
  std::cout << cam2::mode_label(model.mode) << " accuracy " << rep.accuracy << " on " << rep.total << " examples\n";
  return 0;
}

int cmd_attend(const RunConfig& cfg) {
  const fs::path corpus = cfg.str("corpus");
  const auto vocab = cam2::Vocabulary::load(corpus / "vocab.tsv");
  const auto model = load_checked(cfg, vocab);

  std::vector<std::string> sentences;
  if (!cfg.str("sentence").empty()) sentences.push_back(cfg.str("sentence"));
  if (!cfg.str("input").empty()) {
    std::ifstream in(cfg.str("input"), std::ios::binary);
    if (!in) throw cam2::DataError("cannot read " + cfg.str("input"));
    for (std::string line; std::getline(in, line);)
      if (!cam2::detail::blank(line)) sentences.push_back(line);
  }
  if (sentences.empty()) throw cam2::ConfigError("attend needs --sentence or --input");

  std::optional<std::size_t> target;
  const auto& cls = cfg.str("class");
  if (cls == "positive") target = 1;
  else if (cls == "negative") target = 0;
  else if (cls != "predicted") throw cam2::ConfigError("class must be predicted, positive or negative");
  const double fraction = cfg.real("fraction");
  const bool mixed = cfg.flag("mixed");
  cam2::TokenizeOptions topts;
  topts.fold_case = !cfg.flag("keep-case");

  std::set<cam2::Format> formats;
  for (const auto& f : cfg.list("output-format")) formats.insert(cam2::parse_format(f));
  if (formats.empty()) throw cam2::ConfigError("no output format requested");

  std::vector<cam2::HighlightDoc> docs;
  std::string jsonl;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto tokens = cam2::tokenize(sentences[i], topts);
    if (tokens.empty()) throw cam2::DataError("sentence " + std::to_string(i + 1) + " has no tokens");
    const auto ids = cam2::encode(tokens, vocab, model.hyper.max_len);
    tokens.resize(ids.size());
    const auto r = cam2::attend(model, ids, tokens, target);
    auto rec = cam2::to_json(r, cam2::select_top(r, fraction));
    rec["index"] = i + 1;
    jsonl += rec.dump() + "\n";
    docs.push_back(cam2::make_highlight(r, fraction, mixed));
    if (formats.count(cam2::Format::Ansi)) std::cout << cam2::render_highlight(docs.back(), cam2::Format::Ansi);
  }
  const fs::path out = out_dir(cfg);
  if (formats.count(cam2::Format::Html)) write_text(out / "attention.html", cam2::render_html(docs));
  if (formats.count(cam2::Format::Json)) write_text(out / "attention.jsonl", jsonl);
  std::cerr << sentences.size() << " sentence(s) attended\n";
  return 0;
}

int cmd_topwords(const RunConfig& cfg) {
  const fs::path corpus = cfg.str("corpus");
  const auto vocab = cam2::Vocabulary::load(corpus / "vocab.tsv");
  const auto model = load_checked(cfg, vocab);
  const auto examples = cam2::truncate(read_split(corpus, cfg.str("split")), model.hyper.max_len);
  if (examples.empty()) throw cam2::DataError("the " + cfg.str("split") + " split is empty");
  std::vector<cam2::AttentionResult> results;
  results.reserve(examples.size());
  for (const auto& ex : examples) results.push_back(cam2::attend(model, ex.ids, ex.words));
  const auto table = cam2::aggregate_top_words(results, cfg.count("k"), cfg.flag("stop-words"));
  const auto csv = cam2::top_words_csv(table, cfg.count("rows"));
  write_text(out_dir(cfg) / "topwords.csv", csv);
  std::cout << cam2::top_words_csv(table, 20);
  return 0;
}

int cmd_table(const RunConfig& cfg) {
  std::vector<std::pair<cam2::InputMode, cam2::EvalReport>> reports;
  for (const auto& path : cfg.list("evals")) {
    const auto j = read_json(path);
    cam2::EvalReport r;
    r.accuracy = j.at("accuracy").get<double>();
    reports.emplace_back(cam2::parse_mode(j.at("mode").get<std::string>()), r);
  }
  if (reports.empty()) throw cam2::ConfigError("table needs --evals");
  const auto table = cam2::AccuracyTable::from(reports);
  const fs::path out = out_dir(cfg);
  write_text(out / "accuracy.csv", table.csv());
  write_text(out / "accuracy.txt", table.text());
  std::cout << table.text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sentence CNN sentiment classifier with class-activation word attention"};
  app.footer(cam2::cli::key_listing());
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "flat key=value configuration file");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"prepare", "tokenize, label and split a review dataset; build the vocabulary"},
      {"embed", "build the embedding channels for an input mode"},
      {"train", "train the CNN; writes checkpoints, history.csv and eval.json"},
      {"evaluate", "evaluate a checkpoint on a prepared split"},
      {"attend", "per-word attention for sentences (HTML, JSON lines, ANSI)"},
      {"topwords", "most frequently attended words per predicted class"},
      {"table", "accuracy table from eval.json files"},
  };
  std::map<std::string, std::string> cli_values;
  std::map<std::string, bool> cli_flags;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;
  for (const auto& [name, desc] : commands) {
    auto* sub = app.add_subcommand(name, desc);
    sub->fallthrough();
    for (const auto& key : schema()) {
      if (!key.commands.count(name)) continue;
      const std::string help = key.help + " [" + key.fallback + "]";
      options[name][key.name] = key.flag ? sub->add_flag("--" + key.name, cli_flags[key.name], help)
                                         : sub->add_option("--" + key.name, cli_values[key.name], help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const std::map<std::string, std::string> file_values =
        config_path.empty() ? std::map<std::string, std::string>{} : cam2::cli::read_config_file(config_path);
    CLI::App* active = app.get_subcommands().front();
    const std::string cmd = active->get_name();
    std::map<std::string, std::string> given;
    for (const auto& [name, opt] : options[cmd]) {
      if (opt->count() > 0) given[name] = cli_flags.count(name) ? "true" : cli_values[name];
    }
    const RunConfig cfg(cam2::cli::resolve(cmd, file_values, given));
    if (cmd == "prepare") return cmd_prepare(cfg);
    if (cmd == "embed") return cmd_embed(cfg);
    if (cmd == "train") return cmd_train(cfg);
    if (cmd == "evaluate") return cmd_evaluate(cfg);
    if (cmd == "attend") return cmd_attend(cfg);
    if (cmd == "topwords") return cmd_topwords(cfg);
    if (cmd == "table") return cmd_table(cfg);
  } catch (const cam2::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const cam2::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const cam2::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
