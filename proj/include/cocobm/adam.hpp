#pragma once

#include "cocobm/core.hpp"

namespace cocobm {

// Adam with bias correction for one dense parameter block.
template <typename Block>
class Adam {
 public:
  explicit Adam(double lr = 0.01, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Block& param, const Block& grad) {
    if (m_.size() == 0) {
      m_ = Block::Zero(param.rows(), param.cols());
      v_ = Block::Zero(param.rows(), param.cols());
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    param.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  Block m_, v_;
  long t_ = 0;
};

}  // namespace cocobm
