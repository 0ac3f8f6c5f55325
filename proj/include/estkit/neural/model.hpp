#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "estkit/data/dataset.hpp"
#include "estkit/neural/backbone.hpp"
#include "estkit/neural/context.hpp"
#include "estkit/neural/segment.hpp"

namespace estkit::neural {

struct ModelConfig {
  Index window = 40;   // T
  Index segment = 20;  // L
  Index state_dim = 0;
  Index obs_dim = 0;
  Index head_hidden = 512;  // hidden width of the embed and project MLPs
  Index max_context = 512;  // longest context prefix
  bool stats_embedding = true;  // add an embedding of each segment's level and scale
  BackboneConfig backbone;

  Index segments() const { return segment_count(window, segment); }
  Index block() const { return (window + segments() - 1) / segments(); }  // output rows per token
};

template <class S>
class NeuralFilterModel {
 public:
  struct Pass {
    Index batch = 0;
    Index n_ctx = 0;
    std::vector<int> ctx_tokens;
    bool ctx_ready = false;
    Tensor<S> seg_in, stats_in, proj_in;
    typename Mlp2<S>::Cache embed, project;
    std::unique_ptr<typename Backbone<S>::Cache> bb;
  };

  NeuralFilterModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.state_dim < 1 || cfg.obs_dim < 1) throw ConfigError("model needs positive state and observation dims");
    if (cfg.window < 1 || cfg.segment < 1) throw ConfigError("window and segment length must be positive");
    Rng rng(seed);
    const Index d = cfg.backbone.d_model, n = cfg.obs_dim;
    embed_ = Mlp2<S>(store_, "embed", cfg.segment * n, cfg.head_hidden, d, rng);
    if (cfg.stats_embedding) stats_ = Linear<S>(store_, "embed.stats", 2 * n, d, rng);
    context_table_ = store_.add("context_table", kContextVocab, d);
    init_uniform(*context_table_, 0.05, rng);
    // Observation tokens keep their positions whatever the context length.
    pos_ = store_.add("position", cfg.segments(), d);
    init_uniform(*pos_, 0.05, rng);
    ctx_pos_ = store_.add("context_position", cfg.max_context, d);
    init_uniform(*ctx_pos_, 0.05, rng);
    backbone_ = make_backbone<S>(store_, cfg.backbone, rng);
    project_ = Mlp2<S>(store_, "project", d, cfg.head_hidden, cfg.block() * cfg.state_dim, rng);
    state_norm_.mean = Vec::Zero(cfg.state_dim);
    state_norm_.std = Vec::Ones(cfg.state_dim);
    obs_norm_.mean = Vec::Zero(n);
    obs_norm_.std = Vec::Ones(n);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }
  const Backbone<S>& backbone() const { return *backbone_; }

  // Targets are standardized with state_norm; stats features use obs_norm.
  void set_normalization(const ChannelStats& state_norm, const ChannelStats& obs_norm) {
    if (state_norm.mean.size() != cfg_.state_dim || obs_norm.mean.size() != cfg_.obs_dim)
      throw ShapeError("normalization statistics do not match the model dimensions");
    state_norm_ = state_norm;
    obs_norm_ = obs_norm;
  }
  const ChannelStats& state_norm() const { return state_norm_; }
  const ChannelStats& obs_norm() const { return obs_norm_; }

  void freeze_backbone(bool frozen) {
    for (Param<S>* p : store_.all())
      if (p->name.rfind("backbone.", 0) == 0) p->trainable = !frozen;
  }

  void zero_output_head() {
    project_.fc2.w->value.setZero();
    project_.fc2.b->value.setZero();
  }

  std::unique_ptr<Pass> make_pass() const {
    auto p = std::make_unique<Pass>();
    p->bb = backbone_->make_cache();
    return p;
  }

  // Runs the context prefix (empty for no context). Results persist in the
  // pass until the next call.
  void prepare_context(const std::vector<int>* tokens, Pass& pass) const {
    pass.ctx_tokens = tokens ? *tokens : std::vector<int>{};
    pass.n_ctx = static_cast<Index>(pass.ctx_tokens.size());
    if (pass.n_ctx > cfg_.max_context)
      throw ConfigError("context of " + std::to_string(pass.n_ctx) + " tokens exceeds max_context " +
                        std::to_string(cfg_.max_context));
    const Index d = cfg_.backbone.d_model;
    Tensor<S> xc(pass.n_ctx, d);
    for (Index i = 0; i < pass.n_ctx; ++i) {
      const int tok = pass.ctx_tokens[static_cast<std::size_t>(i)];
      if (tok < 0 || tok >= kContextVocab) throw ConfigError("context token out of range");
      xc.row(i) = context_table_->value.row(tok) + ctx_pos_->value.row(i);
    }
    backbone_->forward_context(xc, *pass.bb);
    pass.ctx_ready = true;
  }

  // Standardized estimates for a batch of T x N windows, stacked as
  // (B*T) x M with window b in rows b*T .. b*T+T-1.
  Tensor<S> forward(const std::vector<const Series*>& windows, Pass& pass) const {
    if (!pass.ctx_ready) throw ConfigError("prepare_context must run before forward");
    const Index B = static_cast<Index>(windows.size()), T = cfg_.window, L = cfg_.segment, n = cfg_.obs_dim;
    const Index ns = cfg_.segments(), M = cfg_.state_dim, blk = cfg_.block();
    pass.batch = B;
    pass.seg_in.resize(B * ns, L * n);
    pass.stats_in.resize(B * ns, 2 * n);
    for (Index b = 0; b < B; ++b) {
      const Series& w = *windows[static_cast<std::size_t>(b)];
      if (w.rows() != T || w.cols() != n)
        throw ShapeError("window is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                         ", model expects " + std::to_string(T) + "x" + std::to_string(n));
      const SegmentBatch sb = segment_and_normalize(w, L);
      for (Index s = 0; s < ns; ++s) {
        const Series& seg = sb.segments[static_cast<std::size_t>(s)];
        for (Index r = 0; r < L; ++r)
          for (Index c = 0; c < n; ++c) pass.seg_in(b * ns + s, r * n + c) = static_cast<S>(seg(r, c));
        for (Index c = 0; c < n; ++c) {
          pass.stats_in(b * ns + s, c) = static_cast<S>((sb.mean(s, c) - obs_norm_.mean[c]) / obs_norm_.std[c]);
          pass.stats_in(b * ns + s, n + c) = static_cast<S>(std::log(sb.std(s, c)));
        }
      }
    }
    Tensor<S> x = embed_.forward(pass.seg_in, pass.embed);
    if (cfg_.stats_embedding) x += stats_.forward(pass.stats_in);
    for (Index b = 0; b < B; ++b)
      for (Index s = 0; s < ns; ++s) x.row(b * ns + s) += pos_->value.row(s);
    pass.proj_in = backbone_->forward(x, B, ns, *pass.bb);
    const Tensor<S> out = project_.forward(pass.proj_in, pass.project);
    Tensor<S> pred(B * T, M);
    for (Index b = 0; b < B; ++b)
      for (Index s = 0; s < ns; ++s)
        for (Index r = 0; r < blk; ++r) {
          const Index t = s * blk + r;
          if (t >= T) break;
          pred.row(b * T + t) = out.block(b * ns + s, r * M, 1, M);
        }
    return pred;
  }

  // Accumulates parameter gradients for d loss / d pred.
  void backward(const Tensor<S>& dpred, Pass& pass) const {
    const Index B = pass.batch, T = cfg_.window, ns = cfg_.segments(), M = cfg_.state_dim, blk = cfg_.block();
    Tensor<S> dout = Tensor<S>::Zero(B * ns, blk * M);
    for (Index b = 0; b < B; ++b)
      for (Index s = 0; s < ns; ++s)
        for (Index r = 0; r < blk; ++r) {
          const Index t = s * blk + r;
          if (t >= T) break;
          dout.block(b * ns + s, r * M, 1, M) = dpred.row(b * T + t);
        }
    const Tensor<S> dy = project_.backward(pass.project, dout);
    const Tensor<S> dx = backbone_->backward(dy, *pass.bb);
    embed_.backward(pass.embed, dx);
    if (cfg_.stats_embedding) stats_.backward(pass.stats_in, dx);
    if (pos_->trainable)
      for (Index b = 0; b < B; ++b)
        for (Index s = 0; s < ns; ++s) pos_->grad.row(s) += dx.row(b * ns + s);
    if (pass.n_ctx > 0) {
      const Tensor<S> dxc = backbone_->backward_context(*pass.bb);
      for (Index i = 0; i < pass.n_ctx; ++i) {
        context_table_->grad.row(pass.ctx_tokens[static_cast<std::size_t>(i)]) += dxc.row(i);
        ctx_pos_->grad.row(i) += dxc.row(i);
      }
    }
  }

  // Raw-unit estimate for one window.
  Series predict(const Series& window, const std::vector<int>* ctx_tokens = nullptr) const {
    auto pass = make_pass();
    prepare_context(ctx_tokens, *pass);
    return destandardize(forward({&window}, *pass));
  }

  Series destandardize(const Tensor<S>& pred) const {
    Series out = pred.template cast<double>();
    for (Index c = 0; c < cfg_.state_dim; ++c)
      out.col(c) = out.col(c).array() * state_norm_.std[c] + state_norm_.mean[c];
    return out;
  }

  Tensor<S> standardize_targets(const std::vector<const Series*>& targets) const {
    const Index T = cfg_.window, M = cfg_.state_dim;
    Tensor<S> out(static_cast<Index>(targets.size()) * T, M);
    for (std::size_t b = 0; b < targets.size(); ++b) {
      const Series& x = *targets[b];
      if (x.rows() != T || x.cols() != M) throw ShapeError("target window has the wrong shape");
      for (Index t = 0; t < T; ++t)
        for (Index c = 0; c < M; ++c)
          out(static_cast<Index>(b) * T + t, c) = static_cast<S>((x(t, c) - state_norm_.mean[c]) / state_norm_.std[c]);
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<S> store_;
  Mlp2<S> embed_;
  Linear<S> stats_;
  Param<S>* context_table_ = nullptr;
  Param<S>* pos_ = nullptr;
  Param<S>* ctx_pos_ = nullptr;
  std::unique_ptr<Backbone<S>> backbone_;
  Mlp2<S> project_;
  ChannelStats state_norm_, obs_norm_;
};

// L = (1/B) sum_b (1/T) ||X_b - Xhat_b||_F^2 on stacked (B*T) x M arrays.
template <class S>
double window_loss(const Tensor<S>& pred, const Tensor<S>& target, Index T, Tensor<S>* dpred = nullptr) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("prediction/target mismatch");
  const double batch = static_cast<double>(pred.rows() / T);
  const Tensor<S> diff = pred - target;
  if (dpred) *dpred = diff * static_cast<S>(2.0 / (batch * static_cast<double>(T)));
  return diff.template cast<double>().squaredNorm() / (batch * static_cast<double>(T));
}

}  // namespace estkit::neural
