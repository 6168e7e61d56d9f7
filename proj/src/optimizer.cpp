#include "tsp/optimizer.hpp"

#include <cmath>

namespace tsp {

bool is_transformer_param(const std::string& name) {
  return name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0 ||
         name.rfind("queries", 0) == 0;
}

Optimizer::Optimizer(OptimConfig cfg, const ParamStore& store) : cfg_(cfg) {
  m_.reserve(store.all().size());
  v_.reserve(store.all().size());
  for (const Param& p : store.all()) {
    m_.push_back(Tensor::zeros(p.value.rows, p.value.cols));
    v_.push_back(Tensor::zeros(p.value.rows, p.value.cols));
  }
}

void Optimizer::step(ParamStore& store) {
  ++t_;
  std::vector<Param>& params = store.all();

  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Param& p : params) {
      if (!is_transformer_param(p.name)) continue;
      for (double g : p.grad.d) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) {
      const double s = cfg_.clip_norm / norm;
      for (Param& p : params) {
        if (!is_transformer_param(p.name)) continue;
        for (double& g : p.grad.d) g *= s;
      }
    }
  }

  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  const double lr = cfg_.lr * lr_scale_;
  const double sgd_lr = cfg_.sgd_lr * lr_scale_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    const bool adaptive = !cfg_.split || is_transformer_param(p.name);
    if (adaptive) {
      for (std::size_t j = 0; j < p.value.numel(); ++j) {
        const double g = p.grad.d[j];
        m_[i].d[j] = cfg_.beta1 * m_[i].d[j] + (1.0 - cfg_.beta1) * g;
        v_[i].d[j] = cfg_.beta2 * v_[i].d[j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i].d[j] / bc1;
        const double vhat = v_[i].d[j] / bc2;
        p.value.d[j] -=
            lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.value.d[j]);
      }
    } else {
      // SGD with momentum; m_ doubles as the velocity buffer.
      for (std::size_t j = 0; j < p.value.numel(); ++j) {
        const double g = p.grad.d[j] + cfg_.weight_decay * p.value.d[j];
        m_[i].d[j] = cfg_.momentum * m_[i].d[j] + g;
        p.value.d[j] -= sgd_lr * m_[i].d[j];
      }
    }
    p.grad.fill(0.0);
  }
}

}  // namespace tsp
