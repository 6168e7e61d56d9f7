#pragma once

#include <string>
#include <vector>

#include "tsp/params.hpp"

namespace tsp {

struct OptimConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 norm cap for the transformer-group gradients; <= 0 disables.
  double clip_norm = 0.1;
  // When set, the transformer group keeps the adaptive update and everything
  // else moves to SGD with momentum.
  bool split = false;
  double sgd_lr = 1e-2;
  double momentum = 0.9;
};

// Parameters whose names start with enc. / dec. / queries form the
// transformer group (clipping, optimizer split).
bool is_transformer_param(const std::string& name);

// Decoupled-weight-decay adaptive optimizer, optionally split so that
// non-transformer parameters use SGD + momentum. step() consumes the
// accumulated gradients and zeroes them.
class Optimizer {
 public:
  Optimizer(OptimConfig cfg, const ParamStore& store);
  void step(ParamStore& store);

  // Multiplies both base learning rates; used for step-decay schedules.
  void set_lr_scale(double s) { lr_scale_ = s; }
  double lr_scale() const { return lr_scale_; }

 private:
  OptimConfig cfg_;
  double lr_scale_ = 1.0;
  int t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace tsp
