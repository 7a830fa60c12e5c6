#include "rearec/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>
#include <unordered_set>

namespace rearec::evaluation {

using encoder::ParamNodes;
using numeric::Value;

const MetricsCell* MetricsReport::find(const std::string& split, int step,
                                       const std::string& metric, int group) const {
  for (const MetricsCell& c : cells)
    if (c.split == split && c.step == step && c.metric == metric && c.group == group)
      return &c;
  return nullptr;
}

double MetricsReport::value(const std::string& split, int step, const std::string& metric,
                            int group) const {
  const MetricsCell* c = find(split, step, metric, group);
  if (!c)
    throw DataError("metrics report has no cell (" + split + ", step " +
                    std::to_string(step) + ", " + metric + ", group " +
                    std::to_string(group) + ")");
  return c->value;
}

std::vector<int> rank_items(std::span<const float> user_rep, const Tensor<float>& item_emb) {
  if (static_cast<int>(user_rep.size()) != item_emb.cols())
    throw ArgumentError("rank_items: dimension mismatch");
  const int n = item_emb.rows();
  std::vector<double> score(n);
  for (int i = 0; i < n; ++i) {
    const float* row = item_emb.row_ptr(i);
    double acc = 0.0;
    for (size_t j = 0; j < user_rep.size(); ++j) acc += static_cast<double>(row[j]) * user_rep[j];
    score[i] = acc;
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  return order;
}

MetricPair compute_metrics(long rank_of_target, int k) {
  if (rank_of_target < 1) throw ArgumentError("compute_metrics: rank is 1-based");
  MetricPair m;
  if (rank_of_target <= k) {
    m.recall = 1.0;
    m.ndcg = 1.0 / std::log2(static_cast<double>(rank_of_target) + 1.0);
  }
  return m;
}

namespace {

// 1-based rank of `target` under dot-product scores, ties by index ascending.
long rank_of_target(std::span<const float> user_rep, const Tensor<float>& item_emb,
                    int target, const std::unordered_set<int>* masked) {
  const int n = item_emb.rows();
  const int d = item_emb.cols();
  double target_score = 0.0;
  {
    const float* row = item_emb.row_ptr(target);
    for (int j = 0; j < d; ++j) target_score += static_cast<double>(row[j]) * user_rep[j];
  }
  long rank = 1;
  for (int i = 0; i < n; ++i) {
    if (i == target) continue;
    if (masked && masked->count(i)) continue;
    const float* row = item_emb.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += static_cast<double>(row[j]) * user_rep[j];
    if (s > target_score || (s == target_score && i < target)) ++rank;
  }
  return rank;
}

struct MetricAccumulator {
  double ndcg10 = 0, ndcg20 = 0, recall10 = 0, recall20 = 0;
  long count = 0;

  void add(long rank) {
    const MetricPair a = compute_metrics(rank, 10);
    const MetricPair b = compute_metrics(rank, 20);
    ndcg10 += a.ndcg;
    recall10 += a.recall;
    ndcg20 += b.ndcg;
    recall20 += b.recall;
    ++count;
  }

  void merge(const MetricAccumulator& o) {
    ndcg10 += o.ndcg10;
    ndcg20 += o.ndcg20;
    recall10 += o.recall10;
    recall20 += o.recall20;
    count += o.count;
  }

  void emit(MetricsReport& report, const std::string& split, int step, int group) const {
    const double n = count > 0 ? static_cast<double>(count) : 1.0;
    report.cells.push_back({split, step, group, "ndcg@10", ndcg10 / n, count});
    report.cells.push_back({split, step, group, "ndcg@20", ndcg20 / n, count});
    report.cells.push_back({split, step, group, "recall@10", recall10 / n, count});
    report.cells.push_back({split, step, group, "recall@20", recall20 / n, count});
  }
};

std::vector<const data::Example*> split_examples(const SequenceDataset& ds, Split split) {
  std::vector<const data::Example*> out;
  for (const data::Example& e : ds.examples)
    if (e.split == split) out.push_back(&e);
  return out;
}

// Representation at each depth 0..k_steps without recomputing the encoder:
// one pass, then pooling over the step prefix.
std::vector<Tensor<float>> reps_per_step(const ParamNodes<float>& bound,
                                         const EncoderConfig& cfg,
                                         std::span<const int> prefix, int k_steps,
                                         PoolStrategy strategy) {
  auto states = reasoning::reason<float>(prefix, k_steps, bound, cfg);
  std::vector<Tensor<float>> reps;
  reps.reserve(k_steps + 1);
  Tensor<float> running(1, cfg.d);
  for (int k = 0; k <= k_steps; ++k) {
    const Tensor<float>& state = states.steps[k]->val;
    if (strategy == PoolStrategy::kLastStep) {
      reps.push_back(state);
    } else {
      for (int j = 0; j < cfg.d; ++j) running[j] += state[j];
      Tensor<float> mean = running;
      for (int j = 0; j < cfg.d; ++j) mean[j] /= static_cast<float>(k + 1);
      reps.push_back(std::move(mean));
    }
  }
  return reps;
}

std::vector<long> example_ranks_per_step(const ParamNodes<float>& bound,
                                         const EncoderConfig& cfg, const data::Example& ex,
                                         int k_steps, const EvalOptions& opt) {
  const auto reps = reps_per_step(bound, cfg, ex.prefix, k_steps, opt.strategy);
  std::unordered_set<int> masked;
  if (opt.mask_history) masked.insert(ex.prefix.begin(), ex.prefix.end());
  std::vector<long> ranks;
  ranks.reserve(reps.size());
  for (const Tensor<float>& rep : reps)
    ranks.push_back(rank_of_target(std::span<const float>(rep.data()), bound.item_emb->val,
                                   ex.target, opt.mask_history ? &masked : nullptr));
  return ranks;
}

// Deterministic fan-out: workers own contiguous chunks, results merge in
// chunk order.
template <typename Fn>
void for_each_example(const std::vector<const data::Example*>& examples, int workers, Fn&& fn) {
  const int n = static_cast<int>(examples.size());
  if (workers <= 1 || n < 2 * workers) {
    for (int i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const int lo = w * chunk;
      const int hi = std::min(n, lo + chunk);
      for (int i = lo; i < hi; ++i) fn(i, w);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<long> ranks_per_step(const ModelParams<float>& params, const EncoderConfig& cfg,
                                 std::span<const int> prefix, int target, int k_steps,
                                 const EvalOptions& opt) {
  auto bound = ParamNodes<float>::bind(params, false);
  data::Example ex;
  ex.prefix.assign(prefix.begin(), prefix.end());
  ex.target = target;
  return example_ranks_per_step(bound, cfg, ex, k_steps, opt);
}

MetricsReport evaluate_split(const ModelParams<float>& params, const EncoderConfig& cfg,
                             const SequenceDataset& ds, Split split, int k_steps,
                             const EvalOptions& opt) {
  if (k_steps > cfg.k_max) throw ArgumentError("evaluate_split: steps exceed k_max");
  const auto examples = split_examples(ds, split);
  if (examples.empty()) throw ArgumentError("evaluate_split: split is empty");

  auto bound = ParamNodes<float>::bind(params, false);
  const int workers = std::max(1, opt.workers);
  std::vector<MetricAccumulator> partial(workers);
  for_each_example(examples, workers, [&](int i, int w) {
    const auto ranks = example_ranks_per_step(bound, cfg, *examples[i], k_steps, opt);
    partial[w].add(ranks.back());
  });
  MetricAccumulator acc;
  for (const auto& p : partial) acc.merge(p);

  MetricsReport report;
  acc.emit(report, data::split_name(split), k_steps, kOverallGroup);
  return report;
}

MetricsReport subgroup_report(const ModelParams<float>& params, const EncoderConfig& cfg,
                              const SequenceDataset& ds, Split split,
                              const GroupAssignment& groups, std::span<const int> steps,
                              const EvalOptions& opt) {
  const auto examples = split_examples(ds, split);
  if (examples.empty()) throw ArgumentError("subgroup_report: split is empty");
  int k_max_needed = 0;
  for (int s : steps) k_max_needed = std::max(k_max_needed, s);
  if (k_max_needed > cfg.k_max) throw ArgumentError("subgroup_report: steps exceed k_max");

  const int group_count = groups.group_count;
  auto bound = ParamNodes<float>::bind(params, false);
  const int workers = std::max(1, opt.workers);
  // partial[w][step_slot][group+1]; slot group_count holds the overall row.
  std::vector<std::vector<std::vector<MetricAccumulator>>> partial(
      workers, std::vector<std::vector<MetricAccumulator>>(
                   steps.size(), std::vector<MetricAccumulator>(group_count + 1)));

  for_each_example(examples, workers, [&](int i, int w) {
    const data::Example& ex = *examples[i];
    const int entity = groups.kind == data::GroupKind::kUserByLength ? ex.user : ex.target;
    if (entity < 0 || entity >= static_cast<int>(groups.group_of.size()))
      throw DataError("subgroup_report: entity has no group assignment");
    const int g = groups.group_of[entity];
    const auto ranks = example_ranks_per_step(bound, cfg, ex, k_max_needed, opt);
    for (size_t s = 0; s < steps.size(); ++s) {
      partial[w][s][g].add(ranks[steps[s]]);
      partial[w][s][group_count].add(ranks[steps[s]]);
    }
  });

  MetricsReport report;
  for (size_t s = 0; s < steps.size(); ++s) {
    for (int g = 0; g <= group_count; ++g) {
      MetricAccumulator acc;
      for (int w = 0; w < workers; ++w) acc.merge(partial[w][s][g]);
      acc.emit(report, data::split_name(split), steps[s],
               g == group_count ? kOverallGroup : g);
    }
  }
  return report;
}

PosthocReport aggregate_posthoc(const std::vector<std::vector<long>>& ranks_per_example,
                                const std::string& split) {
  if (ranks_per_example.empty()) throw ArgumentError("aggregate_posthoc: no examples");
  const size_t depth = ranks_per_example[0].size();
  std::vector<MetricAccumulator> per_step(depth);
  MetricAccumulator oracle;
  for (const auto& ranks : ranks_per_example) {
    if (ranks.size() != depth) throw ArgumentError("aggregate_posthoc: ragged rank table");
    long best = ranks[0];
    for (size_t k = 0; k < depth; ++k) {
      per_step[k].add(ranks[k]);
      best = std::min(best, ranks[k]);  // ties resolve to the smallest step
    }
    oracle.add(best);
  }
  PosthocReport report;
  for (size_t k = 0; k < depth; ++k)
    per_step[k].emit(report.per_step, split, static_cast<int>(k), kOverallGroup);
  oracle.emit(report.oracle, split, kOracleStep, kOverallGroup);
  return report;
}

PosthocReport posthoc_oracle(const ModelParams<float>& params, const EncoderConfig& cfg,
                             const SequenceDataset& ds, Split split, int k_max,
                             const EvalOptions& opt) {
  if (k_max > cfg.k_max) throw ArgumentError("posthoc_oracle: k_max exceeds encoder k_max");
  const auto examples = split_examples(ds, split);
  if (examples.empty()) throw ArgumentError("posthoc_oracle: split is empty");

  auto bound = ParamNodes<float>::bind(params, false);
  const int workers = std::max(1, opt.workers);
  std::vector<std::vector<long>> rank_table(examples.size());
  for_each_example(examples, workers, [&](int i, int) {
    rank_table[i] = example_ranks_per_step(bound, cfg, *examples[i], k_max, opt);
  });
  return aggregate_posthoc(rank_table, data::split_name(split));
}

std::vector<long> rank_trajectory(const ModelParams<float>& params, const EncoderConfig& cfg,
                                  std::span<const int> prefix, int target, int k_steps) {
  EvalOptions opt;
  opt.strategy = PoolStrategy::kLastStep;
  return ranks_per_step(params, cfg, prefix, target, k_steps, opt);
}

double average_improvement_pct(const MetricsReport& base, int base_step,
                               const MetricsReport& other, int other_step,
                               const std::string& split, int group) {
  double acc = 0.0;
  for (const auto& metric : kMetricNames) {
    const double b = base.value(split, base_step, metric, group);
    const double o = other.value(split, other_step, metric, group);
    if (b <= 0.0) throw DataError("average_improvement_pct: baseline metric is not positive");
    acc += (o - b) / b;
  }
  return acc / static_cast<double>(kMetricNames.size()) * 100.0;
}

Tensor<double> state_similarity(const std::vector<Tensor<double>>& states) {
  const int n = static_cast<int>(states.size());
  Tensor<double> sim(n, n);
  std::vector<double> norm(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (size_t j = 0; j < states[i].size(); ++j) acc += states[i][j] * states[i][j];
    norm[i] = std::sqrt(acc);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (norm[i] == 0.0 || norm[j] == 0.0) {
        sim.at(i, j) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      if (i == j) {
        sim.at(i, j) = 1.0;
        continue;
      }
      double acc = 0.0;
      for (size_t k = 0; k < states[i].size(); ++k) acc += states[i][k] * states[j][k];
      sim.at(i, j) = acc / (norm[i] * norm[j]);
    }
  }
  return sim;
}

LatencyReport bench_latency(const ModelParams<float>& params, const EncoderConfig& cfg,
                            const SequenceDataset& ds, Split split,
                            std::span<const int> steps_list, bool use_cache,
                            size_t max_examples) {
  auto examples = split_examples(ds, split);
  if (examples.empty()) throw ArgumentError("bench_latency: split is empty");
  if (max_examples > 0 && examples.size() > max_examples) examples.resize(max_examples);

  auto bound = ParamNodes<float>::bind(params, false);

  auto run_pass = [&](int k_steps) {
    double sink = 0.0;
    for (const data::Example* ex : examples) {
      std::span<const int> prefix(ex->prefix);
      if (use_cache) {
        auto states = reasoning::reason<float>(prefix, k_steps, bound, cfg);
        sink += static_cast<double>(states.last()->val[0]);
      } else {
        // Re-encode the full input at every step instead of reusing the cache.
        auto enc = encoder::encode_sequence<float>(prefix, bound, cfg);
        std::vector<Value<float>> extras;
        Value<float> last =
            numeric::slice_rows(enc.states, static_cast<int>(prefix.size()) - 1, 1);
        for (int i = 1; i <= k_steps; ++i) {
          extras.push_back(
              numeric::add(last, numeric::slice_rows(bound.reason_pos, i - 1, 1)));
          Value<float> full = encoder::encode_full<float>(
              prefix, std::span<const Value<float>>(extras), bound, cfg);
          last = numeric::slice_rows(full, full->val.rows() - 1, 1);
        }
        sink += static_cast<double>(last->val[0]);
      }
    }
    return sink;
  };

  LatencyReport report;
  report.cached = use_cache;
  int warm_steps = steps_list.empty() ? 0 : steps_list[0];
  volatile double guard = run_pass(warm_steps);  // warmup pass, excluded
  (void)guard;

  double base_seconds = 0.0;
  for (size_t i = 0; i < steps_list.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    volatile double sink = run_pass(steps_list[i]);
    (void)sink;
    const auto stop = std::chrono::steady_clock::now();
    LatencyReport::Row row;
    row.steps = steps_list[i];
    row.seconds = std::chrono::duration<double>(stop - start).count();
    if (i == 0) base_seconds = row.seconds;
    row.cost_increase_pct =
        base_seconds > 0.0 ? (row.seconds - base_seconds) / base_seconds * 100.0 : 0.0;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace rearec::evaluation
