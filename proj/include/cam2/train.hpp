#pragma once

// Mini-batch training, optimizers and evaluation metrics.

#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cam2/corpus.hpp"
#include "cam2/error.hpp"
#include "cam2/model.hpp"
#include "cam2/random.hpp"

namespace cam2 {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  OptimizerConfig optimizer;
  double lambda = 0.1;
  double keep = 0.5;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("L2 lambda must be >= 0");
    if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError("dropout keep probability must lie in (0, 1]");
    if (!(optimizer.lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (eval_every < 1) throw ConfigError("eval-every must be >= 1");
  }
};

/// SGD or Adam over the CNN parameters and the trainable embedding tables.
/// Adam moments for embeddings are dense and decay every step.
class Optimizer {
 public:
  Optimizer() = default;

  Optimizer(const OptimizerConfig& cfg, const Model<float>& model) : cfg_(cfg) {
    if (cfg.kind == OptimizerKind::Adam) {
      m_ = ModelParams<float>::zeros(model.hyper);
      v_ = ModelParams<float>::zeros(model.hyper);
      for (const auto& ch : model.channels) {
        const bool t = ch.trainable;
        emb_m_.push_back(t ? RowMatrix<float>::Zero(ch.table.rows(), ch.table.cols()) : RowMatrix<float>());
        emb_v_.push_back(t ? RowMatrix<float>::Zero(ch.table.rows(), ch.table.cols()) : RowMatrix<float>());
      }
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return step_; }

  void step(Model<float>& model, const Gradients<float>& g) {
    ++step_;
    if (cfg_.kind == OptimizerKind::Sgd) {
      sgd(model, g);
    } else {
      adam(model, g);
    }
    for (auto& ch : model.channels)
      if (ch.trainable) ch.table.row(0).setZero();
  }

  // State access for checkpointing.
  ModelParams<float>& first_moment() { return m_; }
  ModelParams<float>& second_moment() { return v_; }
  std::vector<RowMatrix<float>>& embedding_first_moment() { return emb_m_; }
  std::vector<RowMatrix<float>>& embedding_second_moment() { return emb_v_; }
  void set_steps(std::uint64_t s) { step_ = s; }

 private:
  static std::vector<float*> tensors(ModelParams<float>& p) {
    std::vector<float*> out;
    p.for_each([&](const std::string&, float* d, std::size_t, bool) { out.push_back(d); });
    return out;
  }

  void sgd(Model<float>& model, const Gradients<float>& g) {
    const auto lr = static_cast<float>(cfg_.lr);
    auto grads = tensors(const_cast<ModelParams<float>&>(g.params));
    std::size_t t = 0;
    model.params.for_each([&](const std::string&, float* d, std::size_t n, bool) {
      const float* gd = grads[t++];
      for (std::size_t i = 0; i < n; ++i) d[i] -= lr * gd[i];
    });
    for (std::size_t c = 0; c < model.channels.size(); ++c) {
      if (!model.channels[c].trainable) continue;
      for (const auto& [id, row] : g.embedding[c]) model.channels[c].table.row(id) -= lr * row.transpose();
    }
  }

  void adam(Model<float>& model, const Gradients<float>& g) {
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const double lr_t = cfg_.lr * std::sqrt(c2) / c1;
    auto update = [&](float* p, float* m, float* v, const float* gr, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = gr ? gr[i] : 0.0;
        m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
        v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
        p[i] = static_cast<float>(p[i] - lr_t * m[i] / (std::sqrt(static_cast<double>(v[i])) + cfg_.eps));
      }
    };
    auto grads = tensors(const_cast<ModelParams<float>&>(g.params));
    auto ms = tensors(m_);
    auto vs = tensors(v_);
    std::size_t t = 0;
    model.params.for_each([&](const std::string&, float* d, std::size_t n, bool) {
      update(d, ms[t], vs[t], grads[t], n);
      ++t;
    });
    for (std::size_t c = 0; c < model.channels.size(); ++c) {
      auto& ch = model.channels[c];
      if (!ch.trainable) continue;
      const auto k = static_cast<std::size_t>(ch.table.cols());
      auto it = g.embedding[c].begin();
      for (Eigen::Index r = 1; r < ch.table.rows(); ++r) {
        const float* gr = nullptr;
        if (it != g.embedding[c].end() && it->first == r) {
          gr = it->second.data();
          ++it;
        }
        update(ch.table.row(r).data(), emb_m_[c].row(r).data(), emb_v_[c].row(r).data(), gr, k);
      }
    }
  }

  OptimizerConfig cfg_;
  std::uint64_t step_ = 0;
  ModelParams<float> m_, v_;
  std::vector<RowMatrix<float>> emb_m_, emb_v_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::size_t total = 0;
  std::size_t confusion[2][2] = {{0, 0}, {0, 0}};  // [true][predicted]
  double accuracy = 0.0;
  double precision[2] = {0.0, 0.0};
  double recall[2] = {0.0, 0.0};
  double loss = 0.0;  // mean cross-entropy
};

/// Argmax per example; equal logits resolve to Negative.
template <typename Example>
EvalReport evaluate(const Model<float>& model, const std::vector<Example>& examples) {
  if (examples.empty()) throw DataError("cannot evaluate on an empty example set");
  EvalReport r;
  double loss = 0.0;
  for (const auto& ex : examples) {
    const auto tr = forward(model, ex.ids);
    const auto truth = static_cast<std::size_t>(ex.label);
    ++r.confusion[truth][tr.predicted()];
    loss += cross_entropy(tr.logits, truth);
  }
  r.total = examples.size();
  r.accuracy = static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / static_cast<double>(r.total);
  for (int c = 0; c < 2; ++c) {
    const auto predicted = r.confusion[0][c] + r.confusion[1][c];
    const auto actual = r.confusion[c][0] + r.confusion[c][1];
    r.precision[c] = predicted ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(predicted) : 0.0;
    r.recall[c] = actual ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(actual) : 0.0;
  }
  r.loss = loss / static_cast<double>(r.total);
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double test_acc = std::nan("");  // NaN when not evaluated this epoch
};

/// Everything needed to continue a run: the current model, optimizer state,
/// completed epochs, history and the best model so far.
struct TrainState {
  Model<float> model;
  Optimizer optimizer;
  std::size_t epochs_done = 0;
  std::vector<EpochRecord> history;
  Model<float> best;
  double best_acc = -1.0;

  static TrainState start(Model<float> model, const TrainConfig& cfg) {
    TrainState s;
    s.optimizer = Optimizer(cfg.optimizer, model);
    s.best = model;
    s.model = std::move(model);
    return s;
  }
};

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,test_acc\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss << ',';
    if (!std::isnan(r.test_acc)) out << r.test_acc;
    out << '\n';
  }
}

/// Mean batch objective (cross-entropy plus L2 term) and the averaged
/// gradient for one batch.
template <typename Example>
double batch_gradient(const Model<float>& model, std::span<const Example* const> batch, Rng& dropout_rng,
                      double keep, double lambda, Gradients<float>& out) {
  out = Gradients<float>::zeros(model.hyper);
  double ce = 0.0;
  for (const Example* ex : batch) {
    const auto tr = forward(model, ex->ids, dropout_rng, keep);
    const auto label = static_cast<std::size_t>(ex->label);
    ce += cross_entropy(tr.logits, label);
    out.add(backward(model, tr, label, 0.0));
  }
  const auto n = static_cast<double>(batch.size());
  out.scale(static_cast<float>(1.0 / n));
  out.add_weight_decay(model.params, lambda);
  return ce / n + 0.5 * lambda * model.params.weight_norm_sq();
}

using EpochCallback = std::function<void(const TrainState&)>;

/// Runs epochs until `cfg.epochs` are complete. Shuffling and dropout draw
/// from per-epoch streams of `cfg.seed`, so a resumed state continues
/// exactly as an uninterrupted run would.
template <typename Example>
void train_epochs(TrainState& state, const std::vector<Example>& train, const std::vector<Example>& test,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw DataError("training split is empty");
  std::vector<const Example*> order;
  order.reserve(train.size());
  for (const auto& ex : train) order.push_back(&ex);

  Gradients<float> grad;
  while (state.epochs_done < cfg.epochs) {
    const std::size_t epoch = state.epochs_done + 1;
    Rng shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
    Rng dropout_rng(derive_seed(cfg.seed, 2000 + epoch));
    std::vector<const Example*> perm = order;
    shuffle_rng.shuffle(std::span<const Example*>(perm));

    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < perm.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, perm.size() - start);
      std::span<const Example* const> batch(perm.data() + start, n);
      const double l = batch_gradient(state.model, batch, dropout_rng, cfg.keep, cfg.lambda, grad);
      if (!std::isfinite(l)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batches + 1;
        throw DivergenceError(msg.str());
      }
      state.optimizer.step(state.model, grad);
      total += l;
      ++batches;
    }
    if (!state.model.params.finite()) throw DivergenceError("parameters became non-finite at epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(batches);
    const bool eval_now = !test.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (eval_now) rec.test_acc = evaluate(state.model, test).accuracy;
    state.history.push_back(rec);
    state.epochs_done = epoch;
    if (test.empty()) {
      state.best = state.model;
    } else if (eval_now && rec.test_acc > state.best_acc) {
      state.best_acc = rec.test_acc;
      state.best = state.model;
    }
    if (on_epoch) on_epoch(state);
  }
}

}  // namespace cam2
