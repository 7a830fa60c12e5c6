#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rearec/data.hpp"
#include "rearec/evaluation.hpp"
#include "rearec/training.hpp"
#include "support/test_util.hpp"

using namespace rearec;
using namespace rearec::training;
using encoder::EncoderConfig;
using numeric::Tensor;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.n_max = 20;
  cfg.k_max = 2;
  cfg.dropout = 0;
  return cfg;
}

data::SequenceDataset small_dataset(uint64_t seed = 11) {
  data::SynthConfig s;
  s.num_users = 60;
  s.num_items = 30;
  s.regimes = 2;
  s.seq_len_min = 6;
  s.seq_len_max = 12;
  s.seed = seed;
  auto log = data::synth_sequences(s);
  return data::chronological_split(log, 700'000, 850'000, 20);
}

bool params_equal(const encoder::ModelParams<float>& a, const encoder::ModelParams<float>& b) {
  bool equal = true;
  auto& ma = const_cast<encoder::ModelParams<float>&>(a);
  auto& mb = const_cast<encoder::ModelParams<float>&>(b);
  std::vector<Tensor<float>*> ta, tb;
  ma.for_each_tensor([&](const std::string&, Tensor<float>& t) { ta.push_back(&t); });
  mb.for_each_tensor([&](const std::string&, Tensor<float>& t) { tb.push_back(&t); });
  if (ta.size() != tb.size()) return false;
  for (size_t i = 0; i < ta.size(); ++i)
    if (!(*ta[i] == *tb[i])) equal = false;
  return equal;
}

}  // namespace

TEST_CASE("init_params is seed deterministic") {
  auto cfg = small_config();
  auto a = init_params<float>(cfg, 50, 9);
  auto b = init_params<float>(cfg, 50, 9);
  CHECK(params_equal(a, b));
  auto c = init_params<float>(cfg, 50, 10);
  CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("init_params embedding spread matches the configured scale") {
  EncoderConfig cfg = small_config();
  cfg.d = 32;
  auto p = init_params<float>(cfg, 400, 3);  // 12800 entries
  double mean = 0;
  for (size_t i = 0; i < p.item_emb.size(); ++i) mean += p.item_emb[i];
  mean /= static_cast<double>(p.item_emb.size());
  double var = 0;
  for (size_t i = 0; i < p.item_emb.size(); ++i)
    var += (p.item_emb[i] - mean) * (p.item_emb[i] - mean);
  var /= static_cast<double>(p.item_emb.size());
  const double stddev = std::sqrt(var);
  CHECK(stddev > 0.015);
  CHECK(stddev < 0.025);
  for (const auto& blk : p.blocks) {
    CHECK(blk.ln1_gain[0] == 1.0f);
    CHECK(blk.ln1_bias[0] == 0.0f);
  }
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  auto cfg = small_config();
  auto params = init_params<float>(cfg, 20, 5);
  auto before = params;
  AdamOptimizer adam(0.01);
  std::vector<Tensor<float>> zero_grads;
  params.for_each_tensor([&](const std::string&, Tensor<float>& t) {
    zero_grads.emplace_back(t.rows(), t.cols());
  });
  adam.step(params, zero_grads);
  CHECK(params_equal(params, before));
}

TEST_CASE("adam moves parameters against the gradient") {
  auto cfg = small_config();
  auto params = init_params<float>(cfg, 20, 5);
  const float before = params.item_emb[0];
  AdamOptimizer adam(0.01);
  std::vector<Tensor<float>> grads;
  params.for_each_tensor([&](const std::string&, Tensor<float>& t) {
    grads.emplace_back(t.rows(), t.cols());
  });
  grads[0][0] = 1.0f;
  adam.step(params, grads);
  CHECK(params.item_emb[0] < before);
  CHECK(std::abs(params.item_emb[0] - (before - 0.01f)) < 1e-4);
}

TEST_CASE("fit rejects datasets without train or valid examples") {
  data::SequenceDataset empty;
  TrainConfig tcfg;
  tcfg.max_epochs = 1;
  CHECK_THROWS_AS(fit(empty, tcfg, small_config()), ArgumentError);

  // All-train dataset: no validation examples.
  data::InteractionLog log;
  log.events = {{"u1", "a", 5, 1}, {"u1", "b", 5, 2}, {"u1", "c", 5, 3}};
  auto ds = data::chronological_split(log, 100, 200);
  CHECK_THROWS_AS(fit(ds, tcfg, small_config()), ArgumentError);
}

TEST_CASE("early stopping halts after exactly patience+1 frozen validations") {
  auto ds = small_dataset();
  TrainConfig tcfg;
  tcfg.objective = objectives::Objective::kBase;
  tcfg.k_steps = 0;
  tcfg.batch_size = 64;
  tcfg.max_epochs = 50;
  tcfg.patience = 1;
  tcfg.seed = 7;

  int rounds = 0;
  auto frozen = [&](const encoder::ModelParams<float>&, int) {
    ++rounds;
    return 0.5;  // never improves after the first round
  };
  auto result = fit(ds, tcfg, small_config(), frozen);
  CHECK(rounds == 2);
  CHECK(result.history.size() == 2);
  CHECK(result.best_epoch == 1);
}

TEST_CASE("fit is deterministic for a fixed seed") {
  auto ds = small_dataset();
  TrainConfig tcfg;
  tcfg.objective = objectives::Objective::kErl;
  tcfg.k_steps = 2;
  tcfg.lambda = 0.01;
  tcfg.batch_size = 64;
  tcfg.max_epochs = 2;
  tcfg.seed = 13;
  auto cfg = small_config();

  auto a = fit(ds, tcfg, cfg);
  auto b = fit(ds, tcfg, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].valid_metric == b.history[i].valid_metric);
  }
  CHECK(params_equal(a.params, b.params));
}

TEST_CASE("training loss trends down on the synthetic corpus") {
  auto ds = small_dataset();
  TrainConfig tcfg;
  tcfg.objective = objectives::Objective::kBase;
  tcfg.k_steps = 0;
  tcfg.learning_rate = 0.003;
  tcfg.batch_size = 64;
  tcfg.max_epochs = 5;
  tcfg.patience = 10;
  tcfg.seed = 3;
  auto result = fit(ds, tcfg, small_config());
  REQUIRE(result.history.size() == 5);
  CHECK(result.history[4].train_loss < result.history[0].train_loss);
}

TEST_CASE("best-epoch parameters reproduce the recorded metric") {
  auto ds = small_dataset();
  TrainConfig tcfg;
  tcfg.objective = objectives::Objective::kBase;
  tcfg.k_steps = 0;
  tcfg.learning_rate = 0.003;
  tcfg.batch_size = 64;
  tcfg.max_epochs = 3;
  tcfg.seed = 21;
  auto cfg = small_config();
  auto result = fit(ds, tcfg, cfg);

  evaluation::EvalOptions opt;
  opt.strategy = reasoning::PoolStrategy::kLastStep;
  auto report = evaluation::evaluate_split(result.params, cfg, ds, data::Split::kValid, 0, opt);
  CHECK(report.value("valid", 0, "ndcg@10") == doctest::Approx(result.best_metric).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto cfg = small_config();
  auto params = init_params<float>(cfg, 40, 77);
  CheckpointMeta meta;
  meta.encoder = cfg;
  meta.train.objective = objectives::Objective::kPrl;
  meta.train.k_steps = 2;
  meta.train.tau = 0.5;
  meta.train.alpha = 2.0;
  meta.epoch = 7;
  meta.item_count = 40;
  meta.history = {{1, 3.25, 0.01}, {2, 2.5, 0.02}};

  auto path = std::filesystem::temp_directory_path() / "rearec_ckpt_test.ckpt";
  save_checkpoint(params, meta, path);
  auto [loaded, loaded_meta] = load_checkpoint(path);
  CHECK(params_equal(params, loaded));
  CHECK(loaded_meta.epoch == 7);
  CHECK(loaded_meta.item_count == 40);
  CHECK(loaded_meta.encoder.d == cfg.d);
  CHECK(loaded_meta.encoder.k_max == cfg.k_max);
  CHECK(loaded_meta.train.objective == objectives::Objective::kPrl);
  CHECK(loaded_meta.train.tau == 0.5);
  REQUIRE(loaded_meta.history.size() == 2);
  CHECK(loaded_meta.history[1].train_loss == 2.5);
}

TEST_CASE("checkpoint detects payload corruption") {
  auto cfg = small_config();
  auto params = init_params<float>(cfg, 10, 3);
  CheckpointMeta meta;
  meta.encoder = cfg;
  meta.item_count = 10;
  auto path = std::filesystem::temp_directory_path() / "rearec_ckpt_corrupt.ckpt";
  save_checkpoint(params, meta, path);

  // Flip one byte near the end of the payload.
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(0, std::ios::end);
  const auto size = static_cast<long>(f.tellg());
  f.seekp(size - 5);
  char byte = 0;
  f.seekg(size - 5);
  f.read(&byte, 1);
  byte ^= 0x40;
  f.seekp(size - 5);
  f.write(&byte, 1);
  f.close();

  CHECK_THROWS_AS(load_checkpoint(path), IntegrityError);
}

TEST_CASE("checkpoint rejects a wrong magic") {
  auto path = std::filesystem::temp_directory_path() / "rearec_ckpt_magic.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTARECKPT____________";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("REAREC"), FormatError);
}

TEST_CASE("checkpoint rejects a wrong version") {
  auto cfg = small_config();
  auto params = init_params<float>(cfg, 10, 3);
  CheckpointMeta meta;
  meta.encoder = cfg;
  meta.item_count = 10;
  auto path = std::filesystem::temp_directory_path() / "rearec_ckpt_version.ckpt";
  save_checkpoint(params, meta, path);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(7);  // version field follows the 7-byte magic
  const uint32_t bogus = 99;
  f.write(reinterpret_cast<const char*>(&bogus), sizeof bogus);
  f.close();
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

TEST_CASE("checkpoint rejects truncated payloads") {
  auto cfg = small_config();
  auto params = init_params<float>(cfg, 10, 3);
  CheckpointMeta meta;
  meta.encoder = cfg;
  meta.item_count = 10;
  auto path = std::filesystem::temp_directory_path() / "rearec_ckpt_trunc.ckpt";
  save_checkpoint(params, meta, path);

  const auto full_size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full_size - 64);
  CHECK_THROWS(load_checkpoint(path));
}

TEST_CASE("crc32 matches the reference vector") {
  // Standard test vector: crc32("123456789") = 0xCBF43926.
  const char* s = "123456789";
  CHECK(crc32(reinterpret_cast<const uint8_t*>(s), 9) == 0xCBF43926u);
}
