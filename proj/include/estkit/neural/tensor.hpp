#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "estkit/core/error.hpp"
#include "estkit/core/rng.hpp"

namespace estkit::neural {

template <class S>
using Tensor = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  Tensor<S> m;  // AdamW first moment
  Tensor<S> v;  // AdamW second moment
  bool trainable = true;
};

// Owns every parameter block by name. Addresses are stable.
template <class S>
class ParamStore {
 public:
  Param<S>* add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (find(name)) throw ConfigError("duplicate parameter '" + name + "'");
    auto p = std::make_unique<Param<S>>();
    p->name = name;
    p->value = Tensor<S>::Zero(rows, cols);
    p->grad = Tensor<S>::Zero(rows, cols);
    p->m = Tensor<S>::Zero(rows, cols);
    p->v = Tensor<S>::Zero(rows, cols);
    params_.push_back(std::move(p));
    return params_.back().get();
  }

  Param<S>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  Param<S>& at(const std::string& name) const {
    Param<S>* p = find(name);
    if (!p) throw ConfigError("no parameter named '" + name + "'");
    return *p;
  }

  std::vector<Param<S>*> all() const {
    std::vector<Param<S>*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  // Parameter values only, in registration order.
  std::vector<Tensor<S>> snapshot() const {
    std::vector<Tensor<S>> out;
    for (const auto& p : params_) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Tensor<S>>& values) {
    if (values.size() != params_.size()) throw ShapeError("snapshot does not match parameter layout");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = values[i];
  }

 private:
  std::vector<std::unique_ptr<Param<S>>> params_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class S>
void init_fan_in(Param<S>& p, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
}

template <class S>
void init_uniform(Param<S>& p, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
}

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay; frozen parameters are skipped.
template <class S>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore<S>& store) {
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, t_));
    const S c2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, t_));
    const S lr = static_cast<S>(cfg_.lr), wd = static_cast<S>(cfg_.weight_decay), eps = static_cast<S>(cfg_.eps);
    for (Param<S>* p : store.all()) {
      if (!p->trainable) continue;
      auto g = p->grad.array();
      p->m.array() = b1 * p->m.array() + (S(1) - b1) * g;
      p->v.array() = b2 * p->v.array() + (S(1) - b2) * g.square();
      p->value.array() -= lr * ((p->m.array() / c1) / ((p->v.array() / c2).sqrt() + eps) + wd * p->value.array());
    }
  }

  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
};

}  // namespace estkit::neural
