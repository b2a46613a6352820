#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vlrm/error.hpp"
#include "vlrm/tape.hpp"

namespace vlrm {

/// Linear warmup from 0 to `peak` over `warmup_steps`, constant afterwards.
inline double warmup_lr(std::uint64_t step, std::uint64_t warmup_steps, double peak) {
  if (warmup_steps == 0 || step >= warmup_steps) return peak;
  return peak * (static_cast<double>(step) / static_cast<double>(warmup_steps));
}

enum class ClipMode { clamp, norm };

/// clamp: every element into [-threshold, threshold].
/// norm: rescale all gradients together to global L2 norm <= threshold.
inline void clip_gradients(std::vector<Matrix*> grads, double threshold, ClipMode mode) {
  if (!(threshold > 0.0)) return;
  if (mode == ClipMode::clamp) {
    for (Matrix* g : grads) *g = g->cwiseMax(-threshold).cwiseMin(threshold);
    return;
  }
  double sq = 0.0;
  for (Matrix* g : grads) sq += g->squaredNorm();
  const double n = std::sqrt(sq);
  if (n > threshold)
    for (Matrix* g : grads) *g *= threshold / n;
}

/// Adam without weight decay; one moment pair per parameter name.
class Adam {
 public:
  struct Moments {
    Matrix m;
    Matrix v;
  };

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::uint64_t steps() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return slots_; }
  std::map<std::string, Moments>& moments() { return slots_; }
  void set_steps(std::uint64_t t) { t_ = t; }

  /// Applies one update; `grads` is index-aligned with `params`.
  void step(const std::vector<Parameter*>& params, const std::vector<Matrix>& grads, double lr) {
    if (params.size() != grads.size()) throw ContractError("parameter and gradient counts differ");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      const Matrix& g = grads[i];
      if (g.rows() != p.value.rows() || g.cols() != p.value.cols())
        throw ContractError("gradient shape mismatch for " + p.name);
      auto it = slots_.find(p.name);
      if (it == slots_.end())
        it = slots_.emplace(p.name, Moments{Matrix::Zero(g.rows(), g.cols()), Matrix::Zero(g.rows(), g.cols())}).first;
      Moments& s = it->second;
      s.m = beta1 * s.m + (1.0 - beta1) * g;
      s.v = beta2 * s.v + (1.0 - beta2) * g.cwiseProduct(g);
      if (lr == 0.0) continue;
      p.value.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
    }
  }

 private:
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> slots_;
};

}  // namespace vlrm
