#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "voldist/errors.hpp"
#include "voldist/tensor.hpp"

namespace voldist {

// Adam with bias correction. step() consumes the gradients accumulated by
// the latest backward pass and zeroes them afterwards, so each optimisation
// step sees exactly one backward pass.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (params_.empty()) throw ContractError("Adam: parameter list is empty");
    for (const auto& p : params_) {
      if (!p.defined() || !p.requires_grad()) {
        throw ContractError("Adam: all parameters must be differentiable leaves");
      }
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::size_t step_count() const { return t_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = params_[pi];
      if (!p.has_grad()) throw ContractError("Adam::step: parameter has no gradient buffer");
      const auto& g = p.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      std::vector<double> next = p.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        next[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      p.set_values(next);
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace voldist
