#include "rearec/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rearec/evaluation.hpp"

namespace rearec::training {

void AdamOptimizer::step(ModelParams<float>& params, const std::vector<Tensor<float>>& grads) {
  // Lazily size the moment buffers to the parameter layout.
  if (m_.empty()) {
    params.for_each_tensor([&](const std::string&, Tensor<float>& t) {
      m_.emplace_back(t.rows(), t.cols());
      v_.emplace_back(t.rows(), t.cols());
    });
  }
  size_t slot = 0;
  size_t count = 0;
  params.for_each_tensor([&](const std::string&, Tensor<float>&) { ++count; });
  if (grads.size() != count) throw ArgumentError("adam: gradient count mismatch");

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.for_each_tensor([&](const std::string&, Tensor<float>& theta) {
    const Tensor<float>& g = grads[slot];
    if (!g.same_shape(theta)) throw ArgumentError("adam: gradient shape mismatch");
    Tensor<float>& m = m_[slot];
    Tensor<float>& v = v_[slot];
    for (size_t i = 0; i < theta.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
      const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      theta[i] -= static_cast<float>(lr_ * m_hat / (std::sqrt(v_hat) + eps_));
    }
    ++slot;
  });
}

namespace {

double validation_ndcg10(const ModelParams<float>& params, const EncoderConfig& cfg,
                         const data::SequenceDataset& ds, const TrainConfig& tcfg) {
  evaluation::EvalOptions opt;
  opt.strategy = tcfg.objective == Objective::kErl ? reasoning::PoolStrategy::kMeanPool
                                                   : reasoning::PoolStrategy::kLastStep;
  auto report =
      evaluation::evaluate_split(params, cfg, ds, data::Split::kValid, tcfg.k_steps, opt);
  return report.value("valid", tcfg.k_steps, "ndcg@10");
}

}  // namespace

FitResult fit(const data::SequenceDataset& ds, const TrainConfig& tcfg,
              const EncoderConfig& ecfg, const ValidationFn& validation_override,
              const EpochCallback& on_epoch) {
  tcfg.validate();
  ecfg.validate();
  if (tcfg.k_steps > ecfg.k_max)
    throw ConfigError("fit: training K exceeds encoder k_max");

  std::vector<const data::Example*> train_examples;
  for (const data::Example& e : ds.examples)
    if (e.split == data::Split::kTrain) train_examples.push_back(&e);
  if (train_examples.empty()) throw ArgumentError("fit: no training examples");
  if (!validation_override && ds.example_count(data::Split::kValid) == 0)
    throw ArgumentError("fit: no validation examples");

  ModelParams<float> params = init_params<float>(ecfg, ds.item_count(), tcfg.seed);
  AdamOptimizer adam(tcfg.learning_rate);
  Rng shuffle_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng noise_rng(tcfg.seed ^ 0x85ebca6b7f4a7c15ULL);
  Rng dropout_rng(tcfg.seed ^ 0xc2b2ae3d27d4eb4fULL);
  const objectives::ObjectiveParams obj = tcfg.objective_params();

  FitResult result;
  ModelParams<float> best = params;
  double best_metric = -1.0;
  int best_epoch = 0;
  int stale_epochs = 0;

  std::vector<size_t> order(train_examples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    size_t loss_count = 0;

    for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const size_t stop = std::min(order.size(), start + tcfg.batch_size);
      std::vector<objectives::TrainSample> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) {
        const data::Example& e = *train_examples[order[i]];
        batch.push_back({std::span<const int>(e.prefix), e.target});
      }
      auto bound = encoder::ParamNodes<float>::bind(params, true);
      encoder::ForwardOptions fwd;
      fwd.dropout = ecfg.dropout;
      fwd.rng = &dropout_rng;
      auto loss = objectives::batch_loss<float>(batch, bound, ecfg, obj, noise_rng, fwd);
      if (!std::isfinite(loss.breakdown.total))
        throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch));
      numeric::backward(loss.total);

      std::vector<Tensor<float>> grads;
      bound.for_each_leaf([&](const std::string&, numeric::Value<float>& leaf) {
        grads.push_back(leaf->grad.empty() ? Tensor<float>(leaf->val.rows(), leaf->val.cols())
                                           : std::move(leaf->grad));
      });
      adam.step(params, grads);
      loss_sum += loss.breakdown.total * static_cast<double>(stop - start);
      loss_count += stop - start;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(loss_count);
    stats.valid_metric = validation_override
                             ? validation_override(params, epoch)
                             : validation_ndcg10(params, ecfg, ds, tcfg);
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.valid_metric > best_metric) {
      best_metric = stats.valid_metric;
      best = params;
      best_epoch = epoch;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
      if (stale_epochs >= tcfg.patience) break;
    }
  }

  result.params = std::move(best);
  result.best_epoch = best_epoch;
  result.best_metric = best_metric;
  return result;
}

}  // namespace rearec::training
