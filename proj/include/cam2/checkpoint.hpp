#pragma once

// Binary model checkpoints and resumable training state. Files are written
// to a temporary sibling and renamed into place, so a reader never observes
// a partial file.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cam2/embed.hpp"
#include "cam2/model.hpp"
#include "cam2/train.hpp"

namespace cam2 {

namespace detail {

inline constexpr char kModelMagic[8] = {'C', 'A', 'M', '2', 'C', 'K', 'P', 'T'};
inline constexpr char kStateMagic[8] = {'C', 'A', 'M', '2', 'S', 'T', 'A', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_floats(std::ostream& out, const float* d, std::size_t n) {
  write_pod<std::uint64_t>(out, n);
  out.write(reinterpret_cast<const char*>(d), static_cast<std::streamsize>(n * sizeof(float)));
}

inline void read_floats(std::istream& in, float* d, std::size_t n) {
  if (read_pod<std::uint64_t>(in) != n) throw DataError("checkpoint tensor size mismatch");
  in.read(reinterpret_cast<char*>(d), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw DataError("truncated checkpoint tensor");
}

inline void write_params(std::ostream& out, const ModelParams<float>& p) {
  p.for_each([&](const std::string&, const float* d, std::size_t n, bool) { write_floats(out, d, n); });
}

inline void read_params(std::istream& in, ModelParams<float>& p) {
  p.for_each([&](const std::string&, float* d, std::size_t n, bool) { read_floats(in, d, n); });
}

inline void check_magic(std::istream& in, const char (&magic)[8], const char* what) {
  char buf[8];
  in.read(buf, 8);
  if (!in || std::memcmp(buf, magic, 8) != 0) throw DataError(std::string("not a ") + what + " file");
  if (read_pod<std::uint32_t>(in) != kCheckpointVersion) throw DataError(std::string("unsupported ") + what + " version");
}

template <typename Write>
void atomic_write(const std::filesystem::path& path, Write&& write) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    write(out);
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

/// Magic, version, vocabulary hash, hyperparameters, input mode, channel
/// tables, then every parameter tensor.
inline void write_model(std::ostream& out, const Model<float>& m, std::uint64_t vocab_hash) {
  using detail::write_pod;
  out.write(detail::kModelMagic, 8);
  write_pod<std::uint32_t>(out, detail::kCheckpointVersion);
  write_pod<std::uint64_t>(out, vocab_hash);
  const auto& hp = m.hyper;
  for (std::uint64_t v : {hp.dim, hp.max_len, hp.filters, hp.classes, hp.channels, hp.heights.size()}) {
    write_pod<std::uint64_t>(out, v);
  }
  for (std::uint64_t h : hp.heights) write_pod<std::uint64_t>(out, h);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.mode));
  for (const auto& ch : m.channels) write_channel(out, ch);
  detail::write_params(out, m.params);
}

struct LoadedModel {
  Model<float> model;
  std::uint64_t vocab_hash = 0;
};

inline LoadedModel read_model(std::istream& in) {
  using detail::read_pod;
  detail::check_magic(in, detail::kModelMagic, "model checkpoint");
  LoadedModel r;
  r.vocab_hash = read_pod<std::uint64_t>(in);
  auto& hp = r.model.hyper;
  hp.dim = read_pod<std::uint64_t>(in);
  hp.max_len = read_pod<std::uint64_t>(in);
  hp.filters = read_pod<std::uint64_t>(in);
  hp.classes = read_pod<std::uint64_t>(in);
  hp.channels = read_pod<std::uint64_t>(in);
  const auto nh = read_pod<std::uint64_t>(in);
  if (nh > 64 || hp.channels > 64) throw DataError("implausible checkpoint header");
  hp.heights.clear();
  for (std::uint64_t i = 0; i < nh; ++i) hp.heights.push_back(read_pod<std::uint64_t>(in));
  const auto mode = read_pod<std::uint32_t>(in);
  if (mode > static_cast<std::uint32_t>(InputMode::FourCh)) throw DataError("unknown input mode in checkpoint");
  r.model.mode = static_cast<InputMode>(mode);
  try {
    hp.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("invalid checkpoint hyperparameters: ") + e.what());
  }
  for (std::size_t c = 0; c < hp.channels; ++c) r.model.channels.push_back(read_channel(in));
  r.model.params = ModelParams<float>::zeros(hp);
  detail::read_params(in, r.model.params);
  r.model.validate();
  return r;
}

inline void save_model(const std::filesystem::path& path, const Model<float>& m, std::uint64_t vocab_hash) {
  detail::atomic_write(path, [&](std::ostream& out) { write_model(out, m, vocab_hash); });
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  return read_model(in);
}

/// Current model, best model, optimizer state and history.
inline void save_state(const std::filesystem::path& path, TrainState& s, std::uint64_t vocab_hash) {
  using detail::write_pod;
  detail::atomic_write(path, [&](std::ostream& out) {
    out.write(detail::kStateMagic, 8);
    write_pod<std::uint32_t>(out, detail::kCheckpointVersion);
    write_pod<std::uint64_t>(out, s.epochs_done);
    write_pod<double>(out, s.best_acc);
    write_pod<std::uint64_t>(out, s.optimizer.steps());
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.optimizer.config().kind));
    write_pod<std::uint64_t>(out, s.history.size());
    for (const auto& r : s.history) {
      write_pod<std::uint64_t>(out, r.epoch);
      write_pod<double>(out, r.train_loss);
      write_pod<double>(out, r.test_acc);
    }
    write_model(out, s.model, vocab_hash);
    write_model(out, s.best, vocab_hash);
    if (s.optimizer.config().kind == OptimizerKind::Adam) {
      detail::write_params(out, s.optimizer.first_moment());
      detail::write_params(out, s.optimizer.second_moment());
      for (auto* moments : {&s.optimizer.embedding_first_moment(), &s.optimizer.embedding_second_moment()}) {
        for (const auto& m : *moments) detail::write_floats(out, m.data(), static_cast<std::size_t>(m.size()));
      }
    }
  });
}

/// Restores a state written by save_state; `cfg` supplies the optimizer
/// hyperparameters, whose kind must match the saved one.
inline TrainState load_state(const std::filesystem::path& path, const TrainConfig& cfg,
                             std::uint64_t* vocab_hash = nullptr) {
  using detail::read_pod;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read training state " + path.string());
  detail::check_magic(in, detail::kStateMagic, "training state");
  TrainState s;
  s.epochs_done = read_pod<std::uint64_t>(in);
  s.best_acc = read_pod<double>(in);
  const auto steps = read_pod<std::uint64_t>(in);
  const auto kind = static_cast<OptimizerKind>(read_pod<std::uint32_t>(in));
  if (kind != cfg.optimizer.kind) throw ConfigError("optimizer differs from the one in the saved state");
  const auto n = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    EpochRecord r;
    r.epoch = read_pod<std::uint64_t>(in);
    r.train_loss = read_pod<double>(in);
    r.test_acc = read_pod<double>(in);
    s.history.push_back(r);
  }
  auto current = read_model(in);
  if (vocab_hash) *vocab_hash = current.vocab_hash;
  s.model = std::move(current.model);
  s.best = read_model(in).model;
  s.optimizer = Optimizer(cfg.optimizer, s.model);
  s.optimizer.set_steps(steps);
  if (kind == OptimizerKind::Adam) {
    detail::read_params(in, s.optimizer.first_moment());
    detail::read_params(in, s.optimizer.second_moment());
    for (auto* moments : {&s.optimizer.embedding_first_moment(), &s.optimizer.embedding_second_moment()}) {
      for (auto& m : *moments) detail::read_floats(in, m.data(), static_cast<std::size_t>(m.size()));
    }
  }
  return s;
}

}  // namespace cam2
