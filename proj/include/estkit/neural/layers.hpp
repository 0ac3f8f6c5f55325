#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "estkit/neural/tensor.hpp"

namespace estkit::neural {

// y = x W + b with W stored in x out.
template <class S>
struct Linear {
  Param<S>* w = nullptr;
  Param<S>* b = nullptr;

  Linear() = default;
  Linear(ParamStore<S>& store, const std::string& name, Index in, Index out, Rng& rng) {
    w = store.add(name + ".w", in, out);
    b = store.add(name + ".b", 1, out);
    init_fan_in(*w, in, rng);
    init_fan_in(*b, in, rng);
  }

  static constexpr Index kGemvRows = 4;

  Index in_dim() const { return w->value.rows(); }
  Index out_dim() const { return w->value.cols(); }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> y(x.rows(), out_dim());
    if (x.rows() <= kGemvRows) {
      // Row-at-a-time products skip GEMM's packed copy of w; single-window
      // inference is bound by reading the weights.
      for (Index r = 0; r < x.rows(); ++r) y.row(r).noalias() = x.row(r) * w->value;
    } else {
      y.noalias() = x * w->value;
    }
    y.rowwise() += b->value.row(0);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& dy) const {
    if (w->trainable) {
      w->grad.noalias() += x.transpose() * dy;
      b->grad += dy.colwise().sum();
    }
    Tensor<S> dx(dy.rows(), in_dim());
    dx.noalias() = dy * w->value.transpose();
    return dx;
  }
};

template <class S>
struct LayerNorm {
  Param<S>* gamma = nullptr;
  Param<S>* beta = nullptr;
  static constexpr double kEps = 1e-5;

  struct Cache {
    Tensor<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
  };

  LayerNorm() = default;
  LayerNorm(ParamStore<S>& store, const std::string& name, Index dim) {
    gamma = store.add(name + ".gamma", 1, dim);
    beta = store.add(name + ".beta", 1, dim);
    gamma->value.setOnes();
  }

  Tensor<S> forward(const Tensor<S>& x, Cache& c) const {
    const Index d = x.cols();
    c.xhat.resize(x.rows(), d);
    c.rstd.resize(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
      const S mean = x.row(i).mean();
      const S var = (x.row(i).array() - mean).square().mean();
      c.rstd[i] = S(1) / std::sqrt(var + static_cast<S>(kEps));
      c.xhat.row(i) = (x.row(i).array() - mean) * c.rstd[i];
    }
    Tensor<S> y = c.xhat.array().rowwise() * gamma->value.row(0).array();
    y.rowwise() += beta->value.row(0);
    return y;
  }

  Tensor<S> backward(const Cache& c, const Tensor<S>& dy) const {
    if (gamma->trainable) {
      gamma->grad += (dy.array() * c.xhat.array()).colwise().sum().matrix();
      beta->grad += dy.colwise().sum();
    }
    Tensor<S> dxhat = dy.array().rowwise() * gamma->value.row(0).array();
    Tensor<S> dx(dy.rows(), dy.cols());
    for (Index i = 0; i < dy.rows(); ++i) {
      const S m1 = dxhat.row(i).mean();
      const S m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
      dx.row(i) = c.rstd[i] * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
    }
    return dx;
  }
};

// Exact (erf) GELU.
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
  return x.unaryExpr([inv_sqrt2](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); });
}

template <class S>
Tensor<S> gelu_backward(const Tensor<S>& x, const Tensor<S>& dy) {
  const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
  const S inv_sqrt2pi = static_cast<S>(0.39894228040143267794);
  return dy.binaryExpr(x, [=](S g, S v) {
    const S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
    const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
    return g * (cdf + v * pdf);
  });
}

// Linear -> GELU -> Linear.
template <class S>
struct Mlp2 {
  Linear<S> fc1, fc2;

  struct Cache {
    Tensor<S> x, pre, act;
  };

  Mlp2() = default;
  Mlp2(ParamStore<S>& store, const std::string& name, Index in, Index hidden, Index out, Rng& rng)
      : fc1(store, name + ".fc1", in, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng) {}

  Tensor<S> forward(const Tensor<S>& x, Cache& c) const {
    c.x = x;
    c.pre = fc1.forward(x);
    c.act = gelu(c.pre);
    return fc2.forward(c.act);
  }

  Tensor<S> backward(const Cache& c, const Tensor<S>& dy) const {
    const Tensor<S> dact = fc2.backward(c.act, dy);
    return fc1.backward(c.x, gelu_backward(c.pre, dact));
  }
};

// Multi-head causal self-attention over `batch` independent sequences of
// length n, each preceded by a shared prefix (possibly empty). Inputs are the
// fused projections [Q | K | V] with D = heads * head_dim columns each.
// Sequence token i attends to every prefix token and to its own tokens <= i.
template <class S>
struct CausalAttention {
  Index heads = 1;

  struct Cache {
    std::vector<Tensor<S>> probs;  // per (sequence, head): n x (n_prefix + n)
  };

  Tensor<S> forward(const Tensor<S>& qkv, Index batch, Index n, const Tensor<S>* prefix_qkv, Cache& c) const {
    const Index d = qkv.cols() / 3, dh = d / heads;
    const Index np = prefix_qkv ? prefix_qkv->rows() : 0;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    Tensor<S> out(batch * n, d);
    c.probs.assign(static_cast<std::size_t>(batch * heads), Tensor<S>());
    for (Index b = 0; b < batch; ++b) {
      for (Index h = 0; h < heads; ++h) {
        const auto q = qkv.block(b * n, h * dh, n, dh);
        const auto k = qkv.block(b * n, d + h * dh, n, dh);
        const auto v = qkv.block(b * n, 2 * d + h * dh, n, dh);
        Tensor<S>& p = c.probs[static_cast<std::size_t>(b * heads + h)];
        p.resize(n, np + n);
        if (np > 0) p.leftCols(np).noalias() = q * prefix_qkv->block(0, d + h * dh, np, dh).transpose();
        p.rightCols(n).noalias() = q * k.transpose();
        for (Index i = 0; i < n; ++i) {
          auto row = p.row(i);
          row *= scale;
          for (Index j = i + 1; j < n; ++j) row[np + j] = -std::numeric_limits<S>::infinity();
          const S mx = row.maxCoeff();
          row = (row.array() - mx).exp();
          row /= row.sum();
        }
        auto o = out.block(b * n, h * dh, n, dh);
        o.noalias() = p.rightCols(n) * v;
        if (np > 0) o.noalias() += p.leftCols(np) * prefix_qkv->block(0, 2 * d + h * dh, np, dh);
      }
    }
    return out;
  }

  // Returns d qkv; adds prefix K/V gradients into *dprefix_qkv.
  Tensor<S> backward(const Tensor<S>& qkv, Index batch, Index n, const Tensor<S>* prefix_qkv, const Cache& c,
                     const Tensor<S>& dout, Tensor<S>* dprefix_qkv) const {
    const Index d = qkv.cols() / 3, dh = d / heads;
    const Index np = prefix_qkv ? prefix_qkv->rows() : 0;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    Tensor<S> dqkv = Tensor<S>::Zero(qkv.rows(), qkv.cols());
    for (Index b = 0; b < batch; ++b) {
      for (Index h = 0; h < heads; ++h) {
        const auto q = qkv.block(b * n, h * dh, n, dh);
        const auto k = qkv.block(b * n, d + h * dh, n, dh);
        const auto v = qkv.block(b * n, 2 * d + h * dh, n, dh);
        const Tensor<S>& p = c.probs[static_cast<std::size_t>(b * heads + h)];
        const auto dov = dout.block(b * n, h * dh, n, dh);
        Tensor<S> dp(n, np + n);
        dp.rightCols(n).noalias() = dov * v.transpose();
        dqkv.block(b * n, 2 * d + h * dh, n, dh).noalias() += p.rightCols(n).transpose() * dov;
        if (np > 0) {
          const auto vp = prefix_qkv->block(0, 2 * d + h * dh, np, dh);
          dp.leftCols(np).noalias() = dov * vp.transpose();
          dprefix_qkv->block(0, 2 * d + h * dh, np, dh).noalias() += p.leftCols(np).transpose() * dov;
        }
        // softmax backward; masked entries have p = 0 and drop out.
        Tensor<S> ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
        ds *= scale;
        dqkv.block(b * n, h * dh, n, dh).noalias() += ds.rightCols(n) * k;
        dqkv.block(b * n, d + h * dh, n, dh).noalias() += ds.rightCols(n).transpose() * q;
        if (np > 0) {
          const auto kp = prefix_qkv->block(0, d + h * dh, np, dh);
          dqkv.block(b * n, h * dh, n, dh).noalias() += ds.leftCols(np) * kp;
          dprefix_qkv->block(0, d + h * dh, np, dh).noalias() += ds.leftCols(np).transpose() * q;
        }
      }
    }
    return dqkv;
  }
};

}  // namespace estkit::neural
