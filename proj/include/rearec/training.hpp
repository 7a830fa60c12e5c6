#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rearec/data.hpp"
#include "rearec/encoder.hpp"
#include "rearec/objectives.hpp"

namespace rearec::training {

using encoder::EncoderConfig;
using encoder::ModelParams;
using numeric::Tensor;
using objectives::Objective;

struct TrainConfig {
  Objective objective = Objective::kBase;
  int k_steps = 0;
  double lambda = 0.01;  // ERL
  double tau = 1.0;      // PRL
  double alpha = 1.0;    // PRL
  double gamma = 0.01;   // PRL
  double tau_c = 1.0;    // PRL
  double learning_rate = 0.001;
  int batch_size = 128;
  int max_epochs = 50;
  int patience = 10;
  uint64_t seed = 42;
  // Early stopping watches validation NDCG@10 at the training depth.

  objectives::ObjectiveParams objective_params() const {
    return {objective, k_steps, lambda, tau, alpha, gamma, tau_c};
  }

  void validate() const {
    if (k_steps < 0) throw ConfigError("train: K must be >= 0");
    if (lambda < 0) throw ConfigError("train: lambda must be >= 0");
    if (tau <= 0) throw ConfigError("train: tau must be > 0");
    if (alpha < 1) throw ConfigError("train: alpha must be >= 1");
    if (gamma < 0) throw ConfigError("train: gamma must be >= 0");
    if (tau_c <= 0) throw ConfigError("train: tau_c must be > 0");
    if (learning_rate <= 0) throw ConfigError("train: learning rate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
  }
};

// Normal(0, 0.02) embeddings and projections, identity layer norms, zero
// biases. Deterministic for a fixed seed.
template <typename T>
ModelParams<T> init_params(const EncoderConfig& cfg, int item_count, uint64_t seed) {
  cfg.validate();
  if (item_count < 1) throw ArgumentError("init_params: item count must be >= 1");
  constexpr double kStd = 0.02;
  Rng rng(seed);
  ModelParams<T> p;
  p.item_emb = Tensor<T>::randn(item_count, cfg.d, kStd, rng);
  p.item_pos = Tensor<T>::randn(cfg.n_max, cfg.d, kStd, rng);
  p.reason_pos = cfg.k_max > 0 ? Tensor<T>::randn(cfg.k_max, cfg.d, kStd, rng)
                               : Tensor<T>(0, cfg.d);
  const int d_ff = 4 * cfg.d;
  for (int l = 0; l < cfg.layers; ++l) {
    encoder::BlockParams<T> b;
    b.wq = Tensor<T>::randn(cfg.d, cfg.d, kStd, rng);
    b.wk = Tensor<T>::randn(cfg.d, cfg.d, kStd, rng);
    b.wv = Tensor<T>::randn(cfg.d, cfg.d, kStd, rng);
    b.wo = Tensor<T>::randn(cfg.d, cfg.d, kStd, rng);
    b.ln1_gain = Tensor<T>(1, cfg.d);
    b.ln1_gain.fill(static_cast<T>(1));
    b.ln1_bias = Tensor<T>(1, cfg.d);
    b.ln2_gain = Tensor<T>(1, cfg.d);
    b.ln2_gain.fill(static_cast<T>(1));
    b.ln2_bias = Tensor<T>(1, cfg.d);
    b.ff1_w = Tensor<T>::randn(cfg.d, d_ff, kStd, rng);
    b.ff1_b = Tensor<T>(1, d_ff);
    b.ff2_w = Tensor<T>::randn(d_ff, cfg.d, kStd, rng);
    b.ff2_b = Tensor<T>(1, cfg.d);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate) : lr_(learning_rate) {}

  // grads must follow ModelParams::for_each_tensor order.
  void step(ModelParams<float>& params, const std::vector<Tensor<float>>& grads);

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_metric = 0.0;  // NDCG@10 on the valid split
};

struct FitResult {
  ModelParams<float> params;  // parameters from the best validation epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_metric = 0.0;
};

// Hook points: `validation_override` replaces the NDCG@10 evaluator (used by
// tests to pin the early-stopping contract); `on_epoch` observes progress.
using ValidationFn = std::function<double(const ModelParams<float>&, int epoch)>;
using EpochCallback = std::function<void(const EpochStats&)>;

FitResult fit(const data::SequenceDataset& ds, const TrainConfig& tcfg,
              const EncoderConfig& ecfg, const ValidationFn& validation_override = nullptr,
              const EpochCallback& on_epoch = nullptr);

// ---------------------------------------------------------------------------
// checkpoint format
// ---------------------------------------------------------------------------
// magic "REAREC\x01", u32 version, length-prefixed JSON metadata, length-
// prefixed JSON tensor index, CRC-guarded little-endian float32 payload.

inline constexpr char kCheckpointMagic[7] = {'R', 'E', 'A', 'R', 'E', 'C', '\x01'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  EncoderConfig encoder;
  TrainConfig train;
  int epoch = 0;
  std::vector<EpochStats> history;
  int item_count = 0;
};

void save_checkpoint(const ModelParams<float>& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
std::pair<ModelParams<float>, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

uint32_t crc32(const uint8_t* data, size_t size);

}  // namespace rearec::training
