#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rearec/diag.hpp"
#include "rearec/encoder.hpp"
#include "rearec/errors.hpp"
#include "rearec/reasoning.hpp"
#include "rearec/rng.hpp"

namespace rearec::objectives {

using encoder::EncoderConfig;
using encoder::ForwardOptions;
using encoder::ParamNodes;
using numeric::Tensor;
using numeric::Value;
using reasoning::ReasoningStates;

inline constexpr double kProbFloor = 1e-12;

enum class Objective { kBase, kErl, kPrl };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kBase: return "base";
    case Objective::kErl: return "erl";
    case Objective::kPrl: return "prl";
  }
  return "?";
}

inline Objective objective_from_name(const std::string& name) {
  if (name == "base") return Objective::kBase;
  if (name == "erl") return Objective::kErl;
  if (name == "prl") return Objective::kPrl;
  throw ConfigError("unknown objective: " + name);
}

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> components;  // unweighted component values
};

// ---------------------------------------------------------------------------
// scoring
// ---------------------------------------------------------------------------

template <typename T>
Value<T> score_logits(const Value<T>& r, const Value<T>& item_emb) {
  return numeric::matmul(r, numeric::transpose(item_emb));  // 1 x N
}

// softmax(r . E^T / temperature)
template <typename T>
Value<T> score_distribution(const Value<T>& r, const Value<T>& item_emb, double temperature) {
  if (temperature <= 0.0) throw ArgumentError("score_distribution: temperature must be > 0");
  return numeric::softmax_rows(numeric::scale(score_logits(r, item_emb), 1.0 / temperature));
}

template <typename T>
Value<T> log_score_distribution(const Value<T>& r, const Value<T>& item_emb,
                                double temperature) {
  if (temperature <= 0.0) throw ArgumentError("score_distribution: temperature must be > 0");
  return numeric::log_softmax_rows(
      numeric::scale(score_logits(r, item_emb), 1.0 / temperature));
}

// -log p[target] on an explicit probability vector, floored at kProbFloor.
inline double rec_loss(std::span<const double> probs, int target) {
  if (target < 0 || static_cast<size_t>(target) >= probs.size())
    throw ArgumentError("rec_loss: target out of range");
  double p = probs[target];
  if (p < kProbFloor) {
    diag::warn("rec_loss: target probability clamped at floor");
    p = kProbFloor;
  }
  return -std::log(p);
}

// Differentiable route: -log softmax(r E^T / tau)[target], same floor.
template <typename T>
Value<T> nll_of_target(const Value<T>& r, const Value<T>& item_emb, int target,
                       double temperature) {
  Value<T> logp = log_score_distribution(r, item_emb, temperature);
  if (target < 0 || target >= logp->val.cols())
    throw ArgumentError("nll_of_target: target out of range");
  if (static_cast<double>(logp->val[target]) < std::log(kProbFloor))
    diag::warn("nll_of_target: target probability clamped at floor");
  return numeric::neg(numeric::clamp_min(numeric::pick(logp, target), std::log(kProbFloor)));
}

// ---------------------------------------------------------------------------
// ensemble reasoning (ERL)
// ---------------------------------------------------------------------------

// -sum_{i<j} KL(y_i || y_j) over score distributions at temperature 1.
// Always <= 0; zero exactly when all states induce identical distributions.
template <typename T>
Value<T> kl_regularizer(std::span<const Value<T>> states, const Value<T>& item_emb) {
  if (states.size() < 2) {
    diag::warn("kl_regularizer: fewer than two states, no pairs to compare");
    return numeric::constant(Tensor<T>::scalar(T{}));
  }
  std::vector<Value<T>> logp;
  logp.reserve(states.size());
  for (const auto& r : states) logp.push_back(log_score_distribution(r, item_emb, 1.0));

  Value<T> acc;
  for (size_t i = 0; i < states.size(); ++i) {
    Value<T> p_i = numeric::vexp(logp[i]);
    for (size_t j = i + 1; j < states.size(); ++j) {
      Value<T> kl = numeric::sum_all(numeric::mul(p_i, numeric::sub(logp[i], logp[j])));
      acc = acc ? numeric::add(acc, kl) : kl;
    }
  }
  return numeric::neg(acc);
}

template <typename T>
struct ErlLossNodes {
  Value<T> total, rec, kl;
  LossBreakdown breakdown() const {
    LossBreakdown b;
    b.total = static_cast<double>(total->val[0]);
    b.components["rec"] = static_cast<double>(rec->val[0]);
    b.components["kl"] = static_cast<double>(kl->val[0]);
    return b;
  }
};

// Mean-pooled cross entropy plus lambda-weighted KL diversity term.
template <typename T>
ErlLossNodes<T> erl_loss(const ReasoningStates<T>& states, const Value<T>& item_emb,
                         int target, double lambda) {
  if (lambda < 0.0) throw ArgumentError("erl_loss: lambda must be >= 0");
  Value<T> pooled = reasoning::user_representation(states, reasoning::PoolStrategy::kMeanPool);
  ErlLossNodes<T> out;
  out.rec = nll_of_target(pooled, item_emb, target, 1.0);
  out.kl = kl_regularizer(std::span<const Value<T>>(states.steps), item_emb);
  out.total = numeric::add(out.rec, numeric::scale(out.kl, lambda));
  return out;
}

// ---------------------------------------------------------------------------
// progressive reasoning (PRL)
// ---------------------------------------------------------------------------

// tau_k = tau * alpha^(K-k): hottest at step 0, base temperature at step K.
struct TemperatureSchedule {
  std::vector<double> taus;
  double base_tau = 1.0;
  double decay = 1.0;

  int k() const { return static_cast<int>(taus.size()) - 1; }
};

inline TemperatureSchedule pta_schedule(double tau, double alpha, int k_steps) {
  if (tau <= 0.0) throw ArgumentError("pta_schedule: tau must be > 0");
  if (alpha < 1.0) throw ArgumentError("pta_schedule: alpha must be >= 1");
  if (k_steps < 0) throw ArgumentError("pta_schedule: K must be >= 0");
  TemperatureSchedule s;
  s.base_tau = tau;
  s.decay = alpha;
  s.taus.resize(k_steps + 1);
  for (int k = 0; k <= k_steps; ++k) s.taus[k] = tau * std::pow(alpha, k_steps - k);
  return s;
}

// Per-step cross entropy under the annealing schedule, summed over steps.
template <typename T>
Value<T> prl_rec_loss(std::span<const Value<T>> states, const Value<T>& item_emb, int target,
                      const TemperatureSchedule& sched) {
  if (states.size() != sched.taus.size())
    throw ArgumentError("prl_rec_loss: states/schedule length mismatch");
  Value<T> acc;
  for (size_t k = 0; k < states.size(); ++k) {
    Value<T> term = nll_of_target(states[k], item_emb, target, sched.taus[k]);
    acc = acc ? numeric::add(acc, term) : term;
  }
  return acc;
}

// x + eps with eps ~ Normal(0, gamma I).
template <typename T>
Tensor<T> noise_inject(const Tensor<T>& x, double gamma, Rng& rng) {
  if (gamma < 0.0) throw ArgumentError("noise_inject: gamma must be >= 0");
  Tensor<T> out = x;
  if (gamma == 0.0) return out;
  const double stddev = std::sqrt(gamma);
  for (size_t i = 0; i < out.size(); ++i)
    out[i] += static_cast<T>(rng.normal(0.0, stddev));
  return out;
}

// InfoNCE between noised and clean states. For step k of sequence b the
// positive is b's own clean r_k; negatives are the other sequences' clean
// r_k. Dot-product similarity, temperature tau_c, mean over the batch.
template <typename T>
Value<T> rcl_loss(std::span<const ReasoningStates<T>> clean,
                  std::span<const std::vector<Value<T>>> noised, double tau_c) {
  if (tau_c <= 0.0) throw ArgumentError("rcl_loss: tau_c must be > 0");
  if (clean.size() != noised.size())
    throw ArgumentError("rcl_loss: clean/noised batch size mismatch");
  const size_t batch = clean.size();
  if (batch == 0) throw ArgumentError("rcl_loss: empty batch");
  const size_t k_steps = noised[0].size();
  if (k_steps == 0) {
    diag::warn("rcl_loss: no reasoning steps, contrastive term is empty");
    return numeric::constant(Tensor<T>::scalar(T{}));
  }
  for (const auto& states : clean)
    if (static_cast<size_t>(states.k()) < k_steps)
      throw ArgumentError("rcl_loss: clean states shorter than noised states");

  Value<T> acc;
  for (size_t k = 1; k <= k_steps; ++k) {
    std::vector<Value<T>> anchors;
    anchors.reserve(batch);
    for (const auto& states : clean) anchors.push_back(states.steps[k]);
    Value<T> bank = numeric::transpose(
        numeric::stack_rows(std::span<const Value<T>>(anchors)));  // d x B
    for (size_t b = 0; b < batch; ++b) {
      Value<T> logits =
          numeric::scale(numeric::matmul(noised[b][k - 1], bank), 1.0 / tau_c);  // 1 x B
      Value<T> term =
          numeric::neg(numeric::pick(numeric::log_softmax_rows(logits), static_cast<int>(b)));
      acc = acc ? numeric::add(acc, term) : term;
    }
  }
  return numeric::scale(acc, 1.0 / static_cast<double>(batch));
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

struct TrainSample {
  std::span<const int> prefix;
  int target = 0;
};

struct ObjectiveParams {
  Objective objective = Objective::kBase;
  int k_steps = 0;
  double lambda = 0.01;   // ERL: KL weight
  double tau = 1.0;       // PRL: base temperature
  double alpha = 1.0;     // PRL: temperature decay rate
  double gamma = 0.01;    // PRL: noise intensity
  double tau_c = 1.0;     // PRL: contrastive temperature
};

template <typename T>
struct BatchLoss {
  Value<T> total;
  LossBreakdown breakdown;
};

// Full PRL batch loss: per-step annealed cross entropy plus the contrastive
// term. The noised pass shares the item-portion cache, starts from the clean
// r_0 and is autoregressive over its own noised states; noise perturbs
// reasoning-step inputs only.
template <typename T>
BatchLoss<T> prl_loss(std::span<const TrainSample> batch, const ParamNodes<T>& params,
                      const EncoderConfig& cfg, const ObjectiveParams& obj, Rng& noise_rng,
                      const ForwardOptions& fwd = {}) {
  if (batch.empty()) throw ArgumentError("prl_loss: empty batch");
  const int k_steps = obj.k_steps;
  const TemperatureSchedule sched = pta_schedule(obj.tau, obj.alpha, k_steps);

  std::vector<ReasoningStates<T>> clean;
  std::vector<std::vector<Value<T>>> noised;
  clean.reserve(batch.size());
  noised.reserve(batch.size());
  Value<T> rec_acc;

  for (const TrainSample& sample : batch) {
    auto enc = encoder::encode_sequence(sample.prefix, params, cfg, fwd);
    const int n = static_cast<int>(sample.prefix.size());
    encoder::KvCache<T> item_cache = enc.cache;  // shared snapshot, length n

    ReasoningStates<T> states;
    states.cache = std::move(enc.cache);
    states.steps.push_back(numeric::slice_rows(enc.states, n - 1, 1));
    for (int i = 1; i <= k_steps; ++i) {
      Value<T> x = numeric::add(states.steps.back(),
                                numeric::slice_rows(params.reason_pos, i - 1, 1));
      states.steps.push_back(encoder::incremental_step(x, states.cache, params, cfg, fwd));
    }

    Value<T> rec = prl_rec_loss(std::span<const Value<T>>(states.steps),
                                params.item_emb, sample.target, sched);
    rec_acc = rec_acc ? numeric::add(rec_acc, rec) : rec;

    std::vector<Value<T>> noisy_steps;
    if (k_steps > 0) {
      encoder::KvCache<T> noisy_cache = item_cache;
      Value<T> prev = states.steps[0];
      for (int i = 1; i <= k_steps; ++i) {
        Value<T> x = numeric::add(prev, numeric::slice_rows(params.reason_pos, i - 1, 1));
        if (obj.gamma > 0.0) {
          Tensor<T> eps(1, cfg.d);
          const double stddev = std::sqrt(obj.gamma);
          for (size_t j = 0; j < eps.size(); ++j)
            eps[j] = static_cast<T>(noise_rng.normal(0.0, stddev));
          x = numeric::add(x, numeric::constant(std::move(eps)));
        }
        prev = encoder::incremental_step(x, noisy_cache, params, cfg, fwd);
        noisy_steps.push_back(prev);
      }
    }
    clean.push_back(std::move(states));
    noised.push_back(std::move(noisy_steps));
  }

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  Value<T> rec_mean = numeric::scale(rec_acc, inv_batch);
  BatchLoss<T> out;
  if (k_steps > 0) {
    Value<T> rcl = rcl_loss(std::span<const ReasoningStates<T>>(clean),
                            std::span<const std::vector<Value<T>>>(noised), obj.tau_c);
    out.total = numeric::add(rec_mean, rcl);
    out.breakdown.components["rcl"] = static_cast<double>(rcl->val[0]);
  } else {
    out.total = rec_mean;
    out.breakdown.components["rcl"] = 0.0;
  }
  out.breakdown.components["rec"] = static_cast<double>(rec_mean->val[0]);
  out.breakdown.total = static_cast<double>(out.total->val[0]);
  return out;
}

// Batch-mean loss for any objective. base: cross entropy on the last
// reasoning state; erl: pooled cross entropy + lambda * KL; prl: see above.
template <typename T>
BatchLoss<T> batch_loss(std::span<const TrainSample> batch, const ParamNodes<T>& params,
                        const EncoderConfig& cfg, const ObjectiveParams& obj, Rng& noise_rng,
                        const ForwardOptions& fwd = {}) {
  if (batch.empty()) throw ArgumentError("batch_loss: empty batch");
  if (obj.objective == Objective::kPrl)
    return prl_loss(batch, params, cfg, obj, noise_rng, fwd);

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  Value<T> total_acc, rec_acc, kl_acc;
  for (const TrainSample& sample : batch) {
    auto states = reasoning::reason(sample.prefix, obj.k_steps, params, cfg, fwd);
    if (obj.objective == Objective::kBase) {
      Value<T> rec = nll_of_target(states.last(), params.item_emb, sample.target, 1.0);
      rec_acc = rec_acc ? numeric::add(rec_acc, rec) : rec;
    } else {
      auto erl = erl_loss(states, params.item_emb, sample.target, obj.lambda);
      rec_acc = rec_acc ? numeric::add(rec_acc, erl.rec) : erl.rec;
      kl_acc = kl_acc ? numeric::add(kl_acc, erl.kl) : erl.kl;
    }
  }
  BatchLoss<T> out;
  Value<T> rec_mean = numeric::scale(rec_acc, inv_batch);
  out.breakdown.components["rec"] = static_cast<double>(rec_mean->val[0]);
  if (obj.objective == Objective::kErl) {
    Value<T> kl_mean = numeric::scale(kl_acc, inv_batch);
    out.total = numeric::add(rec_mean, numeric::scale(kl_mean, obj.lambda));
    out.breakdown.components["kl"] = static_cast<double>(kl_mean->val[0]);
  } else {
    out.total = rec_mean;
  }
  out.breakdown.total = static_cast<double>(out.total->val[0]);
  return out;
}

}  // namespace rearec::objectives
