#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "estkit/data/dataset.hpp"
#include "estkit/neural/model.hpp"

namespace estkit::neural {

struct ContextOptions {
  std::size_t examples = 2;
  Index example_steps = 3;  // steps per example excerpt
  std::size_t max_tokens = kDefaultMaxContextTokens;
  std::string instruction_template = kDefaultInstructionTemplate;
};

// Builds SaP contexts for one system from a pool of (training) trajectories.
class ContextSampler {
 public:
  ContextSampler(SystemModel sys, std::vector<const Trajectory*> pool, ContextOptions opts = {})
      : sys_(std::move(sys)), pool_(std::move(pool)), opts_(std::move(opts)) {
    if (pool_.empty()) throw ConfigError("context examples need at least one training trajectory");
  }

  SaPContext draw(Rng& rng) const {
    return build_sap_context(sys_, sample_examples(pool_, opts_.examples, opts_.example_steps, rng), opts_.max_tokens,
                             opts_.instruction_template);
  }

  // The context used for validation and evaluation.
  SaPContext fixed(std::uint64_t seed) const {
    Rng rng(split_seed(seed, 0xC7));
    return draw(rng);
  }

  const ContextOptions& options() const { return opts_; }
  const SystemModel& system() const { return sys_; }

 private:
  SystemModel sys_;
  std::vector<const Trajectory*> pool_;
  ContextOptions opts_;
};

struct TrainConfig {
  int epochs = 10;
  Index batch = 16;
  Index stride = 1;
  AdamWConfig optimizer;
  bool freeze_backbone = false;
  std::size_t max_windows_per_epoch = 0;  // 0: every training window
  Index eval_batch = 64;
  bool resample_context = true;  // new examples for every batch
};

struct LossCurve {
  std::vector<double> train;  // mean batch loss per epoch (epochs entries)
  std::vector<double> val;    // validation loss, index 0 before training
  int best_epoch = 0;
  double seconds = 0.0;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

inline std::vector<WindowRef> window_refs(const TrajectoryDataset& ds, Split split, Index T, Index stride) {
  std::vector<WindowRef> out;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.split[i] != split) continue;
    for (Index a : window_anchors(ds.trajectories[i].length(), T, stride)) out.push_back({i, a});
  }
  return out;
}

namespace detail {

template <class S>
double validation_loss(const NeuralFilterModel<S>& model, const TrajectoryDataset& ds,
                       const std::vector<WindowRef>& refs, const std::vector<int>* ctx, Index eval_batch) {
  const Index T = model.config().window;
  auto pass = model.make_pass();
  model.prepare_context(ctx, *pass);
  double total = 0.0;
  for (std::size_t start = 0; start < refs.size(); start += static_cast<std::size_t>(eval_batch)) {
    const std::size_t end = std::min(refs.size(), start + static_cast<std::size_t>(eval_batch));
    std::vector<Series> wins, tgts;
    for (std::size_t k = start; k < end; ++k) {
      const Trajectory& tr = ds.trajectories[refs[k].traj];
      wins.push_back(obs_window(tr, refs[k].anchor, T));
      tgts.push_back(target_window(tr, refs[k].anchor, T));
    }
    std::vector<const Series*> w, t;
    for (std::size_t k = 0; k < wins.size(); ++k) w.push_back(&wins[k]), t.push_back(&tgts[k]);
    total += window_loss<S>(model.forward(w, *pass), model.standardize_targets(t), T) * static_cast<double>(wins.size());
  }
  return total / static_cast<double>(refs.size());
}

}  // namespace detail

// Minimizes the window loss on the training split and leaves the model at its
// best-validation parameters. A null `ctx` trains the context-free variant.
template <class S>
LossCurve train(NeuralFilterModel<S>& model, const TrajectoryDataset& ds, const ContextSampler* ctx,
                const TrainConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("epochs must be >= 0 and batch >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const Index T = model.config().window;
  const auto train_refs = window_refs(ds, Split::train, T, cfg.stride);
  const auto val_refs = window_refs(ds, Split::val, T, T);
  if (train_refs.empty()) throw ConfigError("training split is empty");
  if (val_refs.empty()) throw ConfigError("validation split is empty");
  if (ctx && ctx->options().max_tokens > static_cast<std::size_t>(model.config().max_context))
    throw ConfigError("context max_tokens " + std::to_string(ctx->options().max_tokens) + " exceeds model max_context " +
                      std::to_string(model.config().max_context));
  model.set_normalization(ds.state_stats, ds.obs_stats);
  model.freeze_backbone(cfg.freeze_backbone);

  Rng order_rng(split_seed(seed, 1));
  Rng ctx_rng(split_seed(seed, 2));
  std::optional<SaPContext> val_ctx, batch_ctx;
  if (ctx) val_ctx = ctx->fixed(seed), batch_ctx = val_ctx;
  const std::vector<int>* val_tokens = val_ctx ? &val_ctx->token_ids : nullptr;

  AdamW<S> opt(cfg.optimizer);
  LossCurve curve;
  curve.val.push_back(detail::validation_loss(model, ds, val_refs, val_tokens, cfg.eval_batch));
  auto best = model.params().snapshot();

  std::vector<std::size_t> order(train_refs.size());
  auto pass = model.make_pass();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(order_rng.uniform() * static_cast<double>(i)) % i;
      std::swap(order[i - 1], order[j]);
    }
    const std::size_t used =
        cfg.max_windows_per_epoch > 0 ? std::min(cfg.max_windows_per_epoch, order.size()) : order.size();
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < used; start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(used, start + static_cast<std::size_t>(cfg.batch));
      std::vector<Series> wins, tgts;
      for (std::size_t k = start; k < end; ++k) {
        const WindowRef& r = train_refs[order[k]];
        wins.push_back(obs_window(ds.trajectories[r.traj], r.anchor, T));
        tgts.push_back(target_window(ds.trajectories[r.traj], r.anchor, T));
      }
      std::vector<const Series*> w, t;
      for (std::size_t k = 0; k < wins.size(); ++k) w.push_back(&wins[k]), t.push_back(&tgts[k]);
      if (ctx && cfg.resample_context) batch_ctx = ctx->draw(ctx_rng);
      model.prepare_context(batch_ctx ? &batch_ctx->token_ids : nullptr, *pass);
      model.params().zero_grad();
      Tensor<S> dpred;
      const double loss = window_loss<S>(model.forward(w, *pass), model.standardize_targets(t), T, &dpred);
      if (!std::isfinite(loss))
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      model.backward(dpred, *pass);
      opt.step(model.params());
      sum += loss;
      ++batches;
    }
    curve.train.push_back(sum / static_cast<double>(batches));
    const double val = detail::validation_loss(model, ds, val_refs, val_tokens, cfg.eval_batch);
    if (!std::isfinite(val)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    curve.val.push_back(val);
    if (val < curve.val[static_cast<std::size_t>(curve.best_epoch)]) {
      curve.best_epoch = epoch;
      best = model.params().snapshot();
    }
    if (on_epoch) on_epoch(epoch, curve.train.back(), val);
  }
  model.params().restore(best);
  curve.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return curve;
}

struct TrajectoryEstimate {
  Series states;             // T_traj x M
  double ms_per_step = 0.0;  // median over windows of forward time / T
  std::vector<double> window_ms_per_step;
  Index warmup = 0;  // leading steps no window covers
};

// Non-overlapping output tiles at stride T. Steps after the last tile come
// from one extra window anchored at T_traj - T; the first T - 1 steps repeat
// the first estimate.
template <class S>
TrajectoryEstimate estimate_trajectory(const NeuralFilterModel<S>& model, const std::vector<int>* ctx,
                                       const Trajectory& tr) {
  const Index T = model.config().window, len = tr.length();
  std::vector<Index> anchors = window_anchors(len, T, T);
  const Index covered_to = anchors.back() + T;  // exclusive
  const bool tail = covered_to < len;
  if (tail) anchors.push_back(len - T);

  auto pass = model.make_pass();
  model.prepare_context(ctx, *pass);
  TrajectoryEstimate out;
  out.states.resize(len, model.config().state_dim);
  out.warmup = T - 1;
  {
    const Series warm = obs_window(tr, anchors.front(), T);
    model.forward({&warm}, *pass);  // discarded warm-up pass
  }
  std::vector<double> per_step;
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    const Index a = anchors[k];
    const Series win = obs_window(tr, a, T);
    const auto start = std::chrono::steady_clock::now();
    const Tensor<S> pred = model.forward({&win}, *pass);
    const auto stop = std::chrono::steady_clock::now();
    per_step.push_back(std::chrono::duration<double, std::milli>(stop - start).count() / static_cast<double>(T));
    const Series est = model.destandardize(pred);
    const Index first = tail && k + 1 == anchors.size() ? covered_to : a;
    out.states.middleRows(first, a + T - first) = est.bottomRows(a + T - first);
  }
  for (Index t = 0; t < T - 1; ++t) out.states.row(t) = out.states.row(T - 1);
  out.window_ms_per_step = per_step;
  std::nth_element(per_step.begin(), per_step.begin() + static_cast<std::ptrdiff_t>(per_step.size() / 2),
                   per_step.end());
  out.ms_per_step = per_step[per_step.size() / 2];
  return out;
}

}  // namespace estkit::neural
