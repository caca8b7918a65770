#pragma once

// Bias-corrected adaptive-moment optimizer plus the named parameter store the
// training loops share.

#include <map>
#include <set>
#include <string>

#include "octlat/tensor.hpp"

namespace octlat {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m;
  Tensor v;
  int64_t step = 0;
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
                      const AdamConfig& cfg) {
  if (!param.same_shape(grad))
    fail("adam_step: param shape ", shape_str(param.shape()), " vs grad ",
         shape_str(grad.shape()));
  if (state.m.numel() == 0) {
    state.m = Tensor(param.shape(), 0.0);
    state.v = Tensor(param.shape(), 0.0);
  }
  if (!state.m.same_shape(param))
    fail("adam_step: state shape ", shape_str(state.m.shape()), " vs param ",
         shape_str(param.shape()));
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (int64_t i = 0; i < param.numel(); ++i) {
    double g = grad.at(i);
    double m = state.m.at(i) = cfg.beta1 * state.m.at(i) + (1.0 - cfg.beta1) * g;
    double v = state.v.at(i) = cfg.beta2 * state.v.at(i) + (1.0 - cfg.beta2) * g * g;
    double mhat = m / bc1;
    double vhat = v / bc2;
    param.at(i) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Named parameters + their optimizer state. Owned by exactly one training
// loop at a time.
class ParamStore {
 public:
  Tensor& create(const std::string& name, Tensor init) {
    if (params_.count(name)) fail("param store: duplicate '", name, "'");
    return params_[name] = std::move(init);
  }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail("param store: unknown '", name, "'");
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("param store: unknown '", name, "'");
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }

  std::set<std::string> names() const {
    std::set<std::string> out;
    for (const auto& [k, v] : params_) out.insert(k);
    return out;
  }

  void apply_grads(const std::map<std::string, Tensor>& grads, const AdamConfig& cfg) {
    for (const auto& [name, g] : grads) adam_step(at(name), g, adam_[name], cfg);
  }

  void reset_optimizer() { adam_.clear(); }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, AdamState> adam_;
};

}  // namespace octlat
