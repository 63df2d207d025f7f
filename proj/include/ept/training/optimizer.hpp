#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "ept/autodiff.hpp"

namespace ept {

struct LrSchedule {
  double peak = 3e-4;
  std::size_t warmup_steps = 500;
  std::size_t total_steps = 0;
};

/// Linear warmup from 0 to peak, then linear decay to 0 at total_steps.
inline double lr_at(std::size_t step, const LrSchedule& s) {
  if (step > s.total_steps) {
    throw ParameterError("step " + std::to_string(step) + " beyond schedule end " + std::to_string(s.total_steps));
  }
  if (step < s.warmup_steps) return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (s.total_steps <= s.warmup_steps) return 0.0;  // only reachable at step == total
  return s.peak * static_cast<double>(s.total_steps - step) / static_cast<double>(s.total_steps - s.warmup_steps);
}

/// Adam with decoupled weight decay.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  struct Moments {
    Matrix m;
    Matrix v;
  };

  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;

  /// One update of every parameter at learning rate lr. A parameter without
  /// an entry in grads is updated with a zero gradient.
  void update(std::span<Parameter* const> params, const Gradients& grads, double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (Parameter* p : params) {
      auto [it, inserted] = moments.try_emplace(p->name);
      Moments& mo = it->second;
      if (inserted) {
        mo.m = Matrix(p->value.rows(), p->value.cols());
        mo.v = Matrix(p->value.rows(), p->value.cols());
      }
      const Matrix* g = nullptr;
      if (auto git = grads.find(p->name); git != grads.end()) {
        g = &git->second;
        if (!g->same_shape(p->value)) {
          throw ContractError("gradient for '" + p->name + "' is " + g->shape() + ", parameter is " + p->value.shape());
        }
      }
      auto theta = p->value.data();
      auto m = mo.m.data();
      auto v = mo.v.data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = g ? g->data()[i] : 0.0;
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        theta[i] *= 1.0 - lr * weight_decay;
        theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    }
  }
};

}  // namespace ept
