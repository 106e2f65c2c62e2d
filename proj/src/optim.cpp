#include "commitlink/optim.hpp"

#include <cmath>

namespace commitlink {

Adam::Adam(std::vector<ag::Var> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.push_back(ag::Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(ag::Matrix::Zero(p->rows(), p->cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (!p.requires_grad) continue;
    if (p.grad.size() == 0) {
      m_[i] *= options_.beta1;
      v_[i] *= options_.beta2;
    } else {
      m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * p.grad;
      v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * p.grad.cwiseAbs2();
    }
    p.value.array() -=
        options_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (p->grad.size() > 0) p->grad.setZero();
  }
}

}  // namespace commitlink
