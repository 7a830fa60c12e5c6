#pragma once

#include <span>
#include <string>
#include <vector>

#include "rearec/encoder.hpp"
#include "rearec/errors.hpp"

namespace rearec::reasoning {

using encoder::EncoderConfig;
using encoder::ForwardOptions;
using encoder::KvCache;
using encoder::ParamNodes;
using numeric::Value;

// Final-layer states [r_0 .. r_K]. r_0 is the encoder output at the last
// item position; r_i for i >= 1 is the output at reasoning position n+i.
template <typename T>
struct ReasoningStates {
  std::vector<Value<T>> steps;
  KvCache<T> cache;

  int k() const { return static_cast<int>(steps.size()) - 1; }
  const Value<T>& last() const { return steps.back(); }
};

// K-pass latent reasoning: encode the prefix, then repeatedly feed the last
// output (plus the step's reasoning position embedding) back through the
// encoder against the cache.
template <typename T>
ReasoningStates<T> reason(std::span<const int> prefix, int k_steps,
                          const ParamNodes<T>& params, const EncoderConfig& cfg,
                          const ForwardOptions& fwd = {}) {
  if (k_steps < 0) throw ConfigError("reason: K must be >= 0");
  if (k_steps > cfg.k_max) throw ConfigError("reason: K exceeds k_max");

  auto enc = encoder::encode_sequence(prefix, params, cfg, fwd);
  const int n = static_cast<int>(prefix.size());

  ReasoningStates<T> out;
  out.cache = std::move(enc.cache);
  out.steps.push_back(numeric::slice_rows(enc.states, n - 1, 1));
  for (int i = 1; i <= k_steps; ++i) {
    Value<T> x = numeric::add(out.steps.back(),
                              numeric::slice_rows(params.reason_pos, i - 1, 1));
    out.steps.push_back(encoder::incremental_step(x, out.cache, params, cfg, fwd));
  }
  return out;
}

enum class PoolStrategy { kLastStep, kMeanPool };

inline const char* pool_strategy_name(PoolStrategy s) {
  return s == PoolStrategy::kLastStep ? "last_step" : "mean_pool";
}

inline PoolStrategy pool_strategy_from_name(const std::string& name) {
  if (name == "last_step") return PoolStrategy::kLastStep;
  if (name == "mean_pool") return PoolStrategy::kMeanPool;
  throw ConfigError("unknown pooling strategy: " + name);
}

// last_step -> r_K; mean_pool -> arithmetic mean of all K+1 states.
template <typename T>
Value<T> user_representation(const ReasoningStates<T>& states, PoolStrategy strategy) {
  if (states.steps.empty()) throw ArgumentError("user_representation: empty states");
  if (strategy == PoolStrategy::kLastStep || states.steps.size() == 1)
    return states.steps.back();
  return numeric::mean_axis0(
      numeric::stack_rows(std::span<const Value<T>>(states.steps)));
}

}  // namespace rearec::reasoning
