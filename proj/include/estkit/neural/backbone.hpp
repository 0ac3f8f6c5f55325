#pragma once

#include <memory>
#include <string>
#include <vector>

#include "estkit/neural/layers.hpp"

namespace estkit::neural {

struct BackboneConfig {
  std::string kind = "transformer";  // transformer | mlp | rnn | identity
  Index d_model = 256;
  Index layers = 4;
  Index heads = 4;
  Index ffn_mult = 4;
};

// Causal sequence model over D-vectors. A forward pass covers `batch`
// sequences of n tokens stacked row-wise, all preceded by one shared prefix
// (the context tokens) that is run once per pass. Output row i of a sequence
// depends only on the prefix and that sequence's rows <= i.
template <class S>
class Backbone {
 public:
  struct Cache {
    virtual ~Cache() = default;
  };

  virtual ~Backbone() = default;
  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Cache> make_cache() const = 0;
  virtual void forward_context(const Tensor<S>& xc, Cache& c) const = 0;
  virtual Tensor<S> forward(const Tensor<S>& x, Index batch, Index n, Cache& c) const = 0;
  // Accumulates parameter gradients and keeps the prefix gradient in `c`.
  virtual Tensor<S> backward(const Tensor<S>& dy, Cache& c) const = 0;
  // Gradient with respect to the prefix inputs; call after backward.
  virtual Tensor<S> backward_context(Cache& c) const = 0;
};

template <class S>
class IdentityBackbone final : public Backbone<S> {
 public:
  using typename Backbone<S>::Cache;
  struct ICache : Cache {
    Index nc = 0, d = 0;
  };

  std::string kind() const override { return "identity"; }
  std::unique_ptr<Cache> make_cache() const override { return std::make_unique<ICache>(); }
  void forward_context(const Tensor<S>& xc, Cache& c) const override {
    auto& ic = static_cast<ICache&>(c);
    ic.nc = xc.rows();
    ic.d = xc.cols();
  }
  Tensor<S> forward(const Tensor<S>& x, Index, Index, Cache&) const override { return x; }
  Tensor<S> backward(const Tensor<S>& dy, Cache&) const override { return dy; }
  Tensor<S> backward_context(Cache& c) const override {
    auto& ic = static_cast<ICache&>(c);
    return Tensor<S>::Zero(ic.nc, ic.d);
  }
};

// Pre-norm transformer: x += Attn(LN(x)); x += FFN(LN(x)); final LN.
template <class S>
class TransformerBackbone final : public Backbone<S> {
 public:
  using typename Backbone<S>::Cache;

  TransformerBackbone(ParamStore<S>& store, const BackboneConfig& cfg, Rng& rng) {
    if (cfg.heads < 1 || cfg.d_model % cfg.heads != 0) throw ConfigError("d_model must be divisible by heads");
    attn_.heads = cfg.heads;
    const Index d = cfg.d_model;
    for (Index l = 0; l < cfg.layers; ++l) {
      const std::string p = "backbone.layer" + std::to_string(l);
      Layer layer;
      layer.ln1 = LayerNorm<S>(store, p + ".ln1", d);
      layer.qkv = Linear<S>(store, p + ".qkv", d, 3 * d, rng);
      layer.proj = Linear<S>(store, p + ".proj", d, d, rng);
      layer.ln2 = LayerNorm<S>(store, p + ".ln2", d);
      layer.ffn = Mlp2<S>(store, p + ".ffn", d, cfg.ffn_mult * d, d, rng);
      layers_.push_back(layer);
    }
    final_ln_ = LayerNorm<S>(store, "backbone.final_ln", d);
  }

  std::string kind() const override { return "transformer"; }

 private:
  struct Layer {
    LayerNorm<S> ln1;
    Linear<S> qkv;
    Linear<S> proj;
    LayerNorm<S> ln2;
    Mlp2<S> ffn;
  };

  struct LayerCache {
    typename LayerNorm<S>::Cache ln1, ln2;
    Tensor<S> a, qkv, att_out;
    typename CausalAttention<S>::Cache att;
    typename Mlp2<S>::Cache ffn;
  };

  struct TCache : Cache {
    Index nc = 0, batch = 0, n = 0;
    std::vector<LayerCache> ctx, obs;
    typename LayerNorm<S>::Cache final_ln;
    std::vector<Tensor<S>> dctx_qkv;
  };

  Tensor<S> layer_forward(const Layer& ly, const Tensor<S>& x, Index batch, Index n, const Tensor<S>* prefix,
                          LayerCache& lc) const {
    lc.a = ly.ln1.forward(x, lc.ln1);
    lc.qkv = ly.qkv.forward(lc.a);
    lc.att_out = attn_.forward(lc.qkv, batch, n, prefix, lc.att);
    Tensor<S> x1 = x + ly.proj.forward(lc.att_out);
    const Tensor<S> b = ly.ln2.forward(x1, lc.ln2);
    x1 += ly.ffn.forward(b, lc.ffn);
    return x1;
  }

  Tensor<S> layer_backward(const Layer& ly, const Tensor<S>& dx2, Index batch, Index n, const Tensor<S>* prefix,
                           const LayerCache& lc, Tensor<S>* dprefix, const Tensor<S>* extra_dqkv) const {
    Tensor<S> dx1 = dx2 + ly.ln2.backward(lc.ln2, ly.ffn.backward(lc.ffn, dx2));
    const Tensor<S> datt = ly.proj.backward(lc.att_out, dx1);
    Tensor<S> dqkv = attn_.backward(lc.qkv, batch, n, prefix, lc.att, datt, dprefix);
    if (extra_dqkv) dqkv += *extra_dqkv;
    dx1 += ly.ln1.backward(lc.ln1, ly.qkv.backward(lc.a, dqkv));
    return dx1;
  }

 public:
  std::unique_ptr<Cache> make_cache() const override { return std::make_unique<TCache>(); }

  void forward_context(const Tensor<S>& xc, Cache& c) const override {
    auto& tc = static_cast<TCache&>(c);
    tc.nc = xc.rows();
    tc.ctx.assign(layers_.size(), LayerCache());
    if (tc.nc == 0) return;
    Tensor<S> x = xc;
    for (std::size_t l = 0; l < layers_.size(); ++l) x = layer_forward(layers_[l], x, 1, tc.nc, nullptr, tc.ctx[l]);
  }

  Tensor<S> forward(const Tensor<S>& x_in, Index batch, Index n, Cache& c) const override {
    auto& tc = static_cast<TCache&>(c);
    tc.batch = batch;
    tc.n = n;
    tc.obs.assign(layers_.size(), LayerCache());
    Tensor<S> x = x_in;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      x = layer_forward(layers_[l], x, batch, n, tc.nc > 0 ? &tc.ctx[l].qkv : nullptr, tc.obs[l]);
    return final_ln_.forward(x, tc.final_ln);
  }

  Tensor<S> backward(const Tensor<S>& dy, Cache& c) const override {
    auto& tc = static_cast<TCache&>(c);
    const Index d = dy.cols();
    tc.dctx_qkv.assign(layers_.size(), Tensor<S>::Zero(tc.nc, 3 * d));
    Tensor<S> dx = final_ln_.backward(tc.final_ln, dy);
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const bool pre = tc.nc > 0;
      dx = layer_backward(layers_[l], dx, tc.batch, tc.n, pre ? &tc.ctx[l].qkv : nullptr, tc.obs[l],
                          pre ? &tc.dctx_qkv[l] : nullptr, nullptr);
    }
    return dx;
  }

  Tensor<S> backward_context(Cache& c) const override {
    auto& tc = static_cast<TCache&>(c);
    const Index d = final_ln_.gamma->value.cols();
    Tensor<S> dx = Tensor<S>::Zero(tc.nc, d);
    if (tc.nc == 0) return dx;
    for (std::size_t l = layers_.size(); l-- > 0;)
      dx = layer_backward(layers_[l], dx, 1, tc.nc, nullptr, tc.ctx[l], nullptr, &tc.dctx_qkv[l]);
    return dx;
  }

 private:
  std::vector<Layer> layers_;
  LayerNorm<S> final_ln_;
  CausalAttention<S> attn_;
};

// Token-wise residual MLP blocks; tokens never interact, so the context
// cannot influence the outputs.
template <class S>
class MlpBackbone final : public Backbone<S> {
 public:
  using typename Backbone<S>::Cache;

  MlpBackbone(ParamStore<S>& store, const BackboneConfig& cfg, Rng& rng) {
    const Index d = cfg.d_model;
    for (Index l = 0; l < cfg.layers; ++l) {
      const std::string p = "backbone.block" + std::to_string(l);
      lns_.emplace_back(store, p + ".ln", d);
      mlps_.emplace_back(store, p + ".mlp", d, cfg.ffn_mult * d, d, rng);
    }
    final_ln_ = LayerNorm<S>(store, "backbone.final_ln", d);
  }

  std::string kind() const override { return "mlp"; }

 private:
  struct MCache : Cache {
    Index nc = 0, d = 0;
    std::vector<typename LayerNorm<S>::Cache> ln;
    std::vector<typename Mlp2<S>::Cache> mlp;
    typename LayerNorm<S>::Cache final_ln;
  };

 public:
  std::unique_ptr<Cache> make_cache() const override { return std::make_unique<MCache>(); }

  void forward_context(const Tensor<S>& xc, Cache& c) const override {
    auto& mc = static_cast<MCache&>(c);
    mc.nc = xc.rows();
    mc.d = xc.cols();
  }

  Tensor<S> forward(const Tensor<S>& x_in, Index, Index, Cache& c) const override {
    auto& mc = static_cast<MCache&>(c);
    mc.ln.assign(lns_.size(), {});
    mc.mlp.assign(lns_.size(), {});
    Tensor<S> x = x_in;
    for (std::size_t l = 0; l < lns_.size(); ++l) x += mlps_[l].forward(lns_[l].forward(x, mc.ln[l]), mc.mlp[l]);
    return final_ln_.forward(x, mc.final_ln);
  }

  Tensor<S> backward(const Tensor<S>& dy, Cache& c) const override {
    auto& mc = static_cast<MCache&>(c);
    Tensor<S> dx = final_ln_.backward(mc.final_ln, dy);
    for (std::size_t l = lns_.size(); l-- > 0;) dx += lns_[l].backward(mc.ln[l], mlps_[l].backward(mc.mlp[l], dx));
    return dx;
  }

  Tensor<S> backward_context(Cache& c) const override {
    auto& mc = static_cast<MCache&>(c);
    return Tensor<S>::Zero(mc.nc, mc.d);
  }

 private:
  std::vector<LayerNorm<S>> lns_;
  std::vector<Mlp2<S>> mlps_;
  LayerNorm<S> final_ln_;
};

// Stacked Elman layers with residual outputs: h_i = tanh(x_i Wx + b + h_{i-1} Wh),
// out_i = x_i + h_i. Sequences start from the context's final hidden state.
template <class S>
class RnnBackbone final : public Backbone<S> {
 public:
  using typename Backbone<S>::Cache;

  RnnBackbone(ParamStore<S>& store, const BackboneConfig& cfg, Rng& rng) {
    const Index d = cfg.d_model;
    for (Index l = 0; l < cfg.layers; ++l) {
      const std::string p = "backbone.rnn" + std::to_string(l);
      Cell cell;
      cell.wx = Linear<S>(store, p + ".wx", d, d, rng);
      cell.wh = store.add(p + ".wh", d, d);
      init_fan_in(*cell.wh, d, rng);
      cells_.push_back(cell);
    }
    final_ln_ = LayerNorm<S>(store, "backbone.final_ln", d);
  }

  std::string kind() const override { return "rnn"; }

 private:
  struct Cell {
    Linear<S> wx;
    Param<S>* wh = nullptr;
  };

  struct Run {
    Tensor<S> x;   // inputs, batch*n x D
    Tensor<S> h;   // hidden states, batch*n x D
    Tensor<S> h0;  // initial hidden state per sequence, batch x D
  };

  struct RCache : Cache {
    Index nc = 0, batch = 0, n = 0, d = 0;
    std::vector<Run> ctx, obs;
    typename LayerNorm<S>::Cache final_ln;
    std::vector<Tensor<S>> dh_ctx;  // gradient w.r.t. each layer's final context state
  };

  Tensor<S> run_forward(const Cell& cell, const Tensor<S>& x, Index batch, Index n, const Tensor<S>& h0,
                        Run& r) const {
    const Index d = x.cols();
    r.x = x;
    r.h0 = h0;
    const Tensor<S> xw = cell.wx.forward(x);
    r.h.resize(batch * n, d);
    Tensor<S> prev = h0, pre(batch, d);
    for (Index i = 0; i < n; ++i) {
      pre.noalias() = prev * cell.wh->value;
      for (Index b = 0; b < batch; ++b) pre.row(b) += xw.row(b * n + i);
      prev = pre.array().tanh();
      for (Index b = 0; b < batch; ++b) r.h.row(b * n + i) = prev.row(b);
    }
    return x + r.h;
  }

  // Returns d inputs; *dh0 receives the gradient w.r.t. the initial states.
  Tensor<S> run_backward(const Cell& cell, const Run& r, Index batch, Index n, const Tensor<S>& dout,
                         const Tensor<S>* dh_last, Tensor<S>* dh0) const {
    const Index d = dout.cols();
    Tensor<S> dxw(batch * n, d);
    Tensor<S> carry = dh_last ? *dh_last : Tensor<S>::Zero(batch, d);
    Tensor<S> dpre(batch, d), hprev(batch, d);
    for (Index i = n; i-- > 0;) {
      for (Index b = 0; b < batch; ++b) {
        const auto h = r.h.row(b * n + i);
        dpre.row(b) = (carry.row(b) + dout.row(b * n + i)).array() * (S(1) - h.array().square());
        hprev.row(b) = i > 0 ? Tensor<S>(r.h.row(b * n + i - 1)) : Tensor<S>(r.h0.row(b));
        dxw.row(b * n + i) = dpre.row(b);
      }
      if (cell.wh->trainable) cell.wh->grad.noalias() += hprev.transpose() * dpre;
      carry.noalias() = dpre * cell.wh->value.transpose();
    }
    if (dh0) *dh0 = carry;
    return dout + cell.wx.backward(r.x, dxw);
  }

 public:
  std::unique_ptr<Cache> make_cache() const override { return std::make_unique<RCache>(); }

  void forward_context(const Tensor<S>& xc, Cache& c) const override {
    auto& rc = static_cast<RCache&>(c);
    rc.nc = xc.rows();
    rc.d = xc.cols();
    rc.ctx.assign(cells_.size(), Run());
    if (rc.nc == 0) return;
    Tensor<S> x = xc;
    for (std::size_t l = 0; l < cells_.size(); ++l)
      x = run_forward(cells_[l], x, 1, rc.nc, Tensor<S>::Zero(1, rc.d), rc.ctx[l]);
  }

  Tensor<S> forward(const Tensor<S>& x_in, Index batch, Index n, Cache& c) const override {
    auto& rc = static_cast<RCache&>(c);
    rc.batch = batch;
    rc.n = n;
    rc.d = x_in.cols();
    rc.obs.assign(cells_.size(), Run());
    Tensor<S> x = x_in;
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      Tensor<S> h0 = Tensor<S>::Zero(batch, rc.d);
      if (rc.nc > 0) h0.rowwise() = rc.ctx[l].h.row(rc.nc - 1);
      x = run_forward(cells_[l], x, batch, n, h0, rc.obs[l]);
    }
    return final_ln_.forward(x, rc.final_ln);
  }

  Tensor<S> backward(const Tensor<S>& dy, Cache& c) const override {
    auto& rc = static_cast<RCache&>(c);
    rc.dh_ctx.assign(cells_.size(), Tensor<S>::Zero(1, rc.d));
    Tensor<S> dx = final_ln_.backward(rc.final_ln, dy);
    for (std::size_t l = cells_.size(); l-- > 0;) {
      Tensor<S> dh0;
      dx = run_backward(cells_[l], rc.obs[l], rc.batch, rc.n, dx, nullptr, &dh0);
      rc.dh_ctx[l] = dh0.colwise().sum();
    }
    return dx;
  }

  Tensor<S> backward_context(Cache& c) const override {
    auto& rc = static_cast<RCache&>(c);
    Tensor<S> dx = Tensor<S>::Zero(rc.nc, rc.d);
    if (rc.nc == 0) return dx;
    for (std::size_t l = cells_.size(); l-- > 0;)
      dx = run_backward(cells_[l], rc.ctx[l], 1, rc.nc, dx, &rc.dh_ctx[l], nullptr);
    return dx;
  }

 private:
  std::vector<Cell> cells_;
  LayerNorm<S> final_ln_;
};

template <class S>
std::unique_ptr<Backbone<S>> make_backbone(ParamStore<S>& store, const BackboneConfig& cfg, Rng& rng) {
  if (cfg.kind == "transformer") return std::make_unique<TransformerBackbone<S>>(store, cfg, rng);
  if (cfg.kind == "mlp") return std::make_unique<MlpBackbone<S>>(store, cfg, rng);
  if (cfg.kind == "rnn") return std::make_unique<RnnBackbone<S>>(store, cfg, rng);
  if (cfg.kind == "identity") return std::make_unique<IdentityBackbone<S>>();
  throw ConfigError("unknown backbone '" + cfg.kind + "' (expected transformer, mlp, rnn or identity)");
}

}  // namespace estkit::neural
