#pragma once

#include <cmath>
#include <string>

#include "gsde/error.hpp"
#include "gsde/params.hpp"

namespace gsde {

enum class OptimizerKind { kAdam, kSgd };

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}
inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct OptimizerState {
  OptimizerConfig config;
  long step = 0;
  ParamSet<S> first_moment;   // empty for SGD
  ParamSet<S> second_moment;  // empty for SGD
};

template <typename S>
OptimizerState<S> make_optimizer(const OptimizerConfig& cfg, const ParamSet<S>& params) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be positive");
  OptimizerState<S> st;
  st.config = cfg;
  if (cfg.kind == OptimizerKind::kAdam) {
    st.first_moment = params.zeros_like();
    st.second_moment = params.zeros_like();
  }
  return st;
}

// One update step. SGD: p -= lr g. Adam: bias-corrected moment estimates.
template <typename S>
void apply_update(ParamSet<S>& params, const ParamSet<S>& grads, OptimizerState<S>& opt) {
  params.require_layout(grads, "apply_update");
  ++opt.step;
  const auto& cfg = opt.config;
  if (cfg.kind == OptimizerKind::kSgd) {
    const S lr = static_cast<S>(cfg.learning_rate);
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < params[i].size(); ++j) params[i].values[j] -= lr * grads[i].values[j];
    return;
  }
  params.require_layout(opt.first_moment, "apply_update (first moment)");
  params.require_layout(opt.second_moment, "apply_update (second moment)");
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step))));
  const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step))));
  const S lr = static_cast<S>(cfg.learning_rate), eps = static_cast<S>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values;
    auto& m = opt.first_moment[i].values;
    auto& v = opt.second_moment[i].values;
    const auto& g = grads[i].values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (S(1) - b1) * g[j];
      v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
      p[j] -= lr * (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
    }
  }
}

}  // namespace gsde
