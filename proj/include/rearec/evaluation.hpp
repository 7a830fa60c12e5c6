#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rearec/data.hpp"
#include "rearec/encoder.hpp"
#include "rearec/reasoning.hpp"

namespace rearec::evaluation {

using data::GroupAssignment;
using data::SequenceDataset;
using data::Split;
using encoder::EncoderConfig;
using encoder::ModelParams;
using numeric::Tensor;
using reasoning::PoolStrategy;

inline constexpr int kOverallGroup = -1;
inline constexpr int kOracleStep = -1;
inline const std::vector<std::string> kMetricNames = {"ndcg@10", "ndcg@20", "recall@10",
                                                      "recall@20"};

struct MetricsCell {
  std::string split;
  int step = 0;       // reasoning depth; kOracleStep marks the oracle row
  int group = kOverallGroup;
  std::string metric;
  double value = 0.0;
  long count = 0;
};

struct MetricsReport {
  std::vector<MetricsCell> cells;

  // Returns the cell value; throws DataError when absent.
  double value(const std::string& split, int step, const std::string& metric,
               int group = kOverallGroup) const;
  const MetricsCell* find(const std::string& split, int step, const std::string& metric,
                          int group = kOverallGroup) const;
};

// Items sorted by dot-product score descending, ties by index ascending.
std::vector<int> rank_items(std::span<const float> user_rep, const Tensor<float>& item_emb);

// Single-target metrics from a 1-based rank.
struct MetricPair {
  double ndcg = 0.0;
  double recall = 0.0;
};
MetricPair compute_metrics(long rank_of_target, int k);

struct EvalOptions {
  PoolStrategy strategy = PoolStrategy::kLastStep;
  int workers = 1;
  bool mask_history = false;  // exclude prefix items from the candidate ranking
};

// 1-based rank of the target at every reasoning depth 0..k_steps, using the
// chosen pooling per depth. One encoder pass plus k incremental steps.
std::vector<long> ranks_per_step(const ModelParams<float>& params, const EncoderConfig& cfg,
                                 std::span<const int> prefix, int target, int k_steps,
                                 const EvalOptions& opt);

MetricsReport evaluate_split(const ModelParams<float>& params, const EncoderConfig& cfg,
                             const SequenceDataset& ds, Split split, int k_steps,
                             const EvalOptions& opt);

// Per-(group, step) metrics. User grouping keys each example by its user;
// item grouping keys it by its target item.
MetricsReport subgroup_report(const ModelParams<float>& params, const EncoderConfig& cfg,
                              const SequenceDataset& ds, Split split,
                              const GroupAssignment& groups, std::span<const int> steps,
                              const EvalOptions& opt);

// Per-step rows plus the hindsight row that picks, for every example, the
// depth with the best rank (ties to the smallest depth).
struct PosthocReport {
  MetricsReport per_step;
  MetricsReport oracle;  // cells carry step = kOracleStep
};
PosthocReport posthoc_oracle(const ModelParams<float>& params, const EncoderConfig& cfg,
                             const SequenceDataset& ds, Split split, int k_max,
                             const EvalOptions& opt);

// Aggregation core of posthoc_oracle: one rank vector (steps 0..K) per
// example in, per-step rows and the hindsight row out.
PosthocReport aggregate_posthoc(const std::vector<std::vector<long>>& ranks_per_example,
                                const std::string& split);

// Target rank at each step under last-step semantics.
std::vector<long> rank_trajectory(const ModelParams<float>& params, const EncoderConfig& cfg,
                                  std::span<const int> prefix, int target, int k_steps);

// Arithmetic mean over the four reported metrics of the relative improvement
// (other - base) / base, in percent. The conventional "Avg." column for
// comparing a model against a baseline row.
double average_improvement_pct(const MetricsReport& base, int base_step,
                               const MetricsReport& other, int other_step,
                               const std::string& split, int group = kOverallGroup);

// Pairwise cosine similarity; rows for zero vectors are NaN sentinels.
Tensor<double> state_similarity(const std::vector<Tensor<double>>& states);

struct LatencyReport {
  struct Row {
    int steps = 0;
    double seconds = 0.0;
    double cost_increase_pct = 0.0;  // vs the steps = 0 row
  };
  bool cached = true;
  std::vector<Row> rows;
};

// Wall-clock seconds for a full pass over the split at each step count. One
// warmup pass is excluded. Cached mode reuses key/value state; uncached mode
// re-encodes the full input each reasoning step.
LatencyReport bench_latency(const ModelParams<float>& params, const EncoderConfig& cfg,
                            const SequenceDataset& ds, Split split,
                            std::span<const int> steps_list, bool use_cache,
                            size_t max_examples = 0);

}  // namespace rearec::evaluation
