#ifndef RELXFORGE_OPTIM_HPP_
#define RELXFORGE_OPTIM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relxforge/error.hpp"
#include "relxforge/tensor.hpp"

namespace relxforge::nn {

enum class OptimizerKind { kSgd, kAdam, kAdamW };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kAdamW: return "adamw";
  }
  return "adamw";
}

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "adamw") return OptimizerKind::kAdamW;
  throw Error(ErrorCode::kConfigError, "unknown optimizer '" + s + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdamW;
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::uint64_t warmup_steps = 0;

  void validate() const {
    if (!(lr > 0)) throw Error(ErrorCode::kConfigError, "lr must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw Error(ErrorCode::kConfigError, "betas must lie in [0,1)");
    }
    if (!(eps > 0)) throw Error(ErrorCode::kConfigError, "eps must be > 0");
    if (weight_decay < 0) throw Error(ErrorCode::kConfigError, "weight_decay must be >= 0");
    if (max_grad_norm < 0) throw Error(ErrorCode::kConfigError, "max_grad_norm must be >= 0");
  }

  nlohmann::ordered_json to_json() const {
    return {{"kind", to_string(kind)},     {"lr", lr},
            {"beta1", beta1},              {"beta2", beta2},
            {"eps", eps},                  {"weight_decay", weight_decay},
            {"max_grad_norm", max_grad_norm}, {"warmup_steps", warmup_steps}};
  }

  static OptimizerConfig from_json(const nlohmann::json& j) {
    OptimizerConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k == "kind") c.kind = optimizer_kind_from_string(it->get<std::string>());
      else if (k == "lr") c.lr = it->get<double>();
      else if (k == "beta1") c.beta1 = it->get<double>();
      else if (k == "beta2") c.beta2 = it->get<double>();
      else if (k == "eps") c.eps = it->get<double>();
      else if (k == "weight_decay") c.weight_decay = it->get<double>();
      else if (k == "max_grad_norm") c.max_grad_norm = it->get<double>();
      else if (k == "warmup_steps") c.warmup_steps = it->get<std::uint64_t>();
      else throw Error(ErrorCode::kConfigError, "unknown optimizer key '" + k + "'");
    }
    c.validate();
    return c;
  }
};

template <class T>
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

template <class T>
double grad_norm(const std::vector<Tensor<T>*>& params) {
  double sq = 0;
  for (auto* p : params) {
    if (!p->grad) continue;
    for (T g : *p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

/// One update of every parameter from its grad buffer. The decoupled
/// (AdamW) variant shrinks weights by lr*wd before the moment update;
/// plain Adam folds wd into the gradient instead. Parameters without a
/// gradient are left untouched apart from the step counter.
template <class T>
void optimizer_step(const std::vector<Tensor<T>*>& params, OptimizerState<T>& state,
                    const OptimizerConfig& cfg) {
  const bool moments = cfg.kind != OptimizerKind::kSgd;
  if (moments) {
    if (state.m.empty()) {
      for (auto* p : params) {
        state.m.emplace_back(p->size(), T(0));
        state.v.emplace_back(p->size(), T(0));
      }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
      throw Error(ErrorCode::kShapeMismatch, "optimizer state does not match parameter list");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (p->grad && p->grad->size() != p->size()) {
      throw Error(ErrorCode::kShapeMismatch, "gradient size differs from parameter size");
    }
    if (moments && (state.m[i].size() != p->size() || state.v[i].size() != p->size())) {
      throw Error(ErrorCode::kShapeMismatch, "optimizer moment size differs from parameter size");
    }
  }

  ++state.step;
  double lr = cfg.lr;
  if (cfg.warmup_steps > 0) {
    lr *= std::min(1.0, static_cast<double>(state.step) / static_cast<double>(cfg.warmup_steps));
  }
  double clip = 1.0;
  if (cfg.max_grad_norm > 0) {
    const double norm = grad_norm(params);
    if (norm > cfg.max_grad_norm) clip = cfg.max_grad_norm / (norm + 1e-6);
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T tlr = static_cast<T>(lr), teps = static_cast<T>(cfg.eps), wd = static_cast<T>(cfg.weight_decay);
  const T tclip = static_cast<T>(clip);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    if (!p.grad) continue;
    const auto& g = *p.grad;
    switch (cfg.kind) {
      case OptimizerKind::kSgd:
        for (std::size_t j = 0; j < p.size(); ++j) {
          p.data[j] -= tlr * (g[j] * tclip + wd * p.data[j]);
        }
        break;
      case OptimizerKind::kAdam:
      case OptimizerKind::kAdamW: {
        auto& m = state.m[i];
        auto& v = state.v[i];
        const bool decoupled = cfg.kind == OptimizerKind::kAdamW;
        const T step_size = static_cast<T>(lr / bc1);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        for (std::size_t j = 0; j < p.size(); ++j) {
          T gj = g[j] * tclip;
          if (decoupled) {
            p.data[j] *= T(1) - tlr * wd;
          } else {
            gj += wd * p.data[j];
          }
          m[j] = b1 * m[j] + (T(1) - b1) * gj;
          v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
          p.data[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + teps);
        }
        break;
      }
    }
  }
}

template <class T>
void adamw_step(const std::vector<Tensor<T>*>& params, OptimizerState<T>& state, OptimizerConfig cfg) {
  cfg.kind = OptimizerKind::kAdamW;
  optimizer_step(params, state, cfg);
}

template <class T>
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<Tensor<T>*> params)
      : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }
  void step() { optimizer_step(params_, state_, cfg_); }

  const OptimizerConfig& config() const { return cfg_; }
  OptimizerConfig& config() { return cfg_; }
  OptimizerState<T>& state() { return state_; }
  const OptimizerState<T>& state() const { return state_; }
  const std::vector<Tensor<T>*>& params() const { return params_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor<T>*> params_;
  OptimizerState<T> state_;
};

}  // namespace relxforge::nn

#endif  // RELXFORGE_OPTIM_HPP_
