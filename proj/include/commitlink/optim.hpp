#pragma once

#include <vector>

#include "commitlink/autograd.hpp"

namespace commitlink {

// Adam over a fixed, ordered list of parameters. Missing gradients count
// as zero.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::vector<ag::Var> params, Options options);

  void step();
  void zero_grad();
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  long steps() const { return t_; }

 private:
  std::vector<ag::Var> params_;
  std::vector<ag::Matrix> m_, v_;
  Options options_;
  long t_ = 0;
};

}  // namespace commitlink
