#pragma once

// AdamW with decoupled weight decay, global-norm gradient clipping, and the
// warmup + cosine learning-rate schedule shared by pretraining and probes.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cscon/common.hpp"
#include "cscon/params.hpp"
#include "cscon/tensor.hpp"

namespace cscon {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
public:
  explicit AdamW(std::vector<TensorT<float>> params, AdamWConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.values().size(), 0.0f);
      v_.emplace_back(p.values().size(), 0.0f);
    }
  }

  explicit AdamW(ParamStoreT<float>& store, AdamWConfig cfg = {})
      : AdamW(collect(store), cfg) {}

  static std::vector<TensorT<float>> collect(ParamStoreT<float>& store) {
    std::vector<TensorT<float>> out;
    for (auto& e : store.entries()) out.push_back(e.tensor);
    return out;
  }

  // One decoupled-decay update from the gradients currently held by the
  // parameters. Parameters with no accumulated gradient yet are skipped.
  void step(double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi];
      if (p.grad().size() != p.values().size()) continue;
      auto& val = p.values();
      auto& grd = p.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = grd[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        double x = val[i];
        x -= lr * weight_decay * x;
        x -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        val[i] = static_cast<float>(x);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

private:
  std::vector<TensorT<float>> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  std::int64_t t_ = 0;
};

// Scales gradients in place so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
inline double clip_grad_norm(std::vector<TensorT<float>>& params, double max_norm) {
  double total = 0.0;
  for (auto& p : params) {
    if (p.grad().size() != p.values().size()) continue;
    for (float g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
      if (p.grad().size() != p.values().size()) continue;
      for (auto& g : p.grad()) g *= s;
    }
  }
  return norm;
}

// Linear warmup from base_lr / warmup_steps up to base_lr, then a cosine
// decay that reaches min_lr on the final step. The first post-warmup step
// equals base_lr, so the junction is continuous.
inline double lr_at_step(double base_lr, double min_lr, std::int64_t step,
                         std::int64_t warmup_steps, std::int64_t total_steps) {
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const std::int64_t span = total_steps - warmup_steps - 1;
  if (span <= 0) return min_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(progress * 3.14159265358979323846));
}

}  // namespace cscon
