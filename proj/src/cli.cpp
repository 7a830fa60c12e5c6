#include "rearec/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rearec/data.hpp"
#include "rearec/encoder.hpp"
#include "rearec/evaluation.hpp"
#include "rearec/report_io.hpp"
#include "rearec/training.hpp"

namespace rearec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// NDJSON event log on stderr.
void log_event(json fields) {
  std::cerr << fields.dump() << '\n';
}

const std::set<std::string>& config_schema() {
  static const std::set<std::string> keys = {
      // encoder
      "d", "layers", "heads", "n_max", "k_max", "mask_mode", "dropout",
      // training
      "objective", "k", "lambda", "tau", "alpha", "gamma", "tau_c",
      "learning_rate", "batch_size", "max_epochs", "patience", "seed",
      // paths
      "data", "out_dir"};
  return keys;
}

struct RunSettings {
  encoder::EncoderConfig enc;
  training::TrainConfig train;
  std::string data_path;
  std::string out_dir = ".";
};

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
  }
}

long to_long(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
  }
}

void apply_config_entry(RunSettings& s, const std::string& key, const std::string& value) {
  if (key == "d") s.enc.d = static_cast<int>(to_long(key, value));
  else if (key == "layers") s.enc.layers = static_cast<int>(to_long(key, value));
  else if (key == "heads") s.enc.heads = static_cast<int>(to_long(key, value));
  else if (key == "n_max") s.enc.n_max = static_cast<int>(to_long(key, value));
  else if (key == "k_max") s.enc.k_max = static_cast<int>(to_long(key, value));
  else if (key == "mask_mode") s.enc.mask_mode = encoder::mask_mode_from_name(value);
  else if (key == "dropout") s.enc.dropout = to_double(key, value);
  else if (key == "objective") s.train.objective = objectives::objective_from_name(value);
  else if (key == "k") s.train.k_steps = static_cast<int>(to_long(key, value));
  else if (key == "lambda") s.train.lambda = to_double(key, value);
  else if (key == "tau") s.train.tau = to_double(key, value);
  else if (key == "alpha") s.train.alpha = to_double(key, value);
  else if (key == "gamma") s.train.gamma = to_double(key, value);
  else if (key == "tau_c") s.train.tau_c = to_double(key, value);
  else if (key == "learning_rate") s.train.learning_rate = to_double(key, value);
  else if (key == "batch_size") s.train.batch_size = static_cast<int>(to_long(key, value));
  else if (key == "max_epochs") s.train.max_epochs = static_cast<int>(to_long(key, value));
  else if (key == "patience") s.train.patience = static_cast<int>(to_long(key, value));
  else if (key == "seed") s.train.seed = static_cast<uint64_t>(to_long(key, value));
  else if (key == "data") s.data_path = value;
  else if (key == "out_dir") s.out_dir = value;
  else throw ConfigError("unknown config key: " + key);
}

std::vector<int> parse_step_list(const std::string& text) {
  std::vector<int> steps;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      steps.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ArgumentError("bad step list entry: '" + part + "'");
    }
    if (steps.back() < 0) throw ArgumentError("steps must be >= 0");
  }
  if (steps.empty()) throw ArgumentError("empty step list");
  return steps;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> names;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) names.push_back(part);
  }
  if (names.empty()) throw ArgumentError("empty list");
  return names;
}

void ensure_out_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create out dir: " + out_dir);
}

// The user's earliest example in a split; used by trace/similarity.
const data::Example& first_example_of_user(const data::SequenceDataset& ds,
                                           const std::string& user, data::Split split) {
  auto it = ds.user_index.find(user);
  if (it == ds.user_index.end()) throw DataError("unknown user: " + user);
  for (const data::Example& e : ds.examples)
    if (e.user == it->second && e.split == split) return e;
  throw DataError("user has no " + std::string(data::split_name(split)) + " example: " + user);
}

reasoning::PoolStrategy default_strategy(objectives::Objective o) {
  return o == objectives::Objective::kErl ? reasoning::PoolStrategy::kMeanPool
                                          : reasoning::PoolStrategy::kLastStep;
}

// ---------------------------------------------------------------------------
// subcommand payloads
// ---------------------------------------------------------------------------

struct SynthArgs {
  data::SynthConfig cfg;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  auto log = data::synth_sequences(a.cfg);
  data::save_interactions_tsv(log, a.out);
  log_event({{"event", "synth"},
             {"users", a.cfg.num_users},
             {"items", a.cfg.num_items},
             {"events", log.size()},
             {"out", a.out}});
  return 0;
}

struct PrepareArgs {
  std::string in, out;
  double min_rating = 3.0;
  int k_core = 5;
  int n_max = 50;
  std::optional<int64_t> t1, t2;
  double t1_frac = 0.7, t2_frac = 0.85;
};

int run_prepare(const PrepareArgs& a) {
  auto log = data::load_interactions(a.in);
  auto filtered = data::preprocess(log, a.min_rating, a.k_core);
  if (filtered.empty()) throw DataError("preprocessing removed every event");

  int64_t t1, t2;
  if (a.t1 && a.t2) {
    t1 = *a.t1;
    t2 = *a.t2;
  } else {
    std::vector<int64_t> times;
    times.reserve(filtered.size());
    for (const auto& e : filtered.events) times.push_back(e.timestamp);
    std::sort(times.begin(), times.end());
    auto quantile = [&](double q) {
      const size_t i = std::min(times.size() - 1,
                                static_cast<size_t>(q * static_cast<double>(times.size())));
      return times[i];
    };
    t1 = quantile(a.t1_frac);
    t2 = quantile(a.t2_frac);
    if (t1 >= t2) throw DataError("timestamp quantiles collapse; supply --t1/--t2");
  }
  auto ds = data::chronological_split(filtered, t1, t2, a.n_max);
  data::save_dataset(ds, a.out);
  log_event({{"event", "prepare"},
             {"events", filtered.size()},
             {"users", ds.user_count()},
             {"items", ds.item_count()},
             {"train", ds.example_count(data::Split::kTrain)},
             {"valid", ds.example_count(data::Split::kValid)},
             {"test", ds.example_count(data::Split::kTest)},
             {"t1", t1},
             {"t2", t2},
             {"out", a.out}});
  return 0;
}

int run_train(const RunSettings& s) {
  if (s.data_path.empty()) throw ArgumentError("train: --data is required");
  ensure_out_dir(s.out_dir);
  auto ds = data::load_dataset(s.data_path);
  if (s.train.k_steps > s.enc.k_max)
    throw ConfigError("train: k exceeds k_max; raise k_max");

  auto result = training::fit(ds, s.train, s.enc, nullptr, [](const training::EpochStats& e) {
    log_event({{"event", "epoch"},
               {"epoch", e.epoch},
               {"train_loss", e.train_loss},
               {"valid_ndcg10", e.valid_metric}});
  });

  training::CheckpointMeta meta;
  meta.encoder = s.enc;
  meta.train = s.train;
  meta.epoch = result.best_epoch;
  meta.history = result.history;
  meta.item_count = ds.item_count();
  const fs::path ckpt = fs::path(s.out_dir) / "model.ckpt";
  training::save_checkpoint(result.params, meta, ckpt);

  std::ostringstream hist;
  hist << "epoch,train_loss,valid_ndcg10\n";
  for (const auto& e : result.history)
    hist << e.epoch << ',' << e.train_loss << ',' << e.valid_metric << '\n';
  report_io::write_text(hist.str(), fs::path(s.out_dir) / "history.csv");

  log_event({{"event", "train_done"},
             {"best_epoch", result.best_epoch},
             {"best_valid_ndcg10", result.best_metric},
             {"checkpoint", ckpt.string()}});
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, out_dir = ".", split = "test", strategy;
  std::string steps = "0";
  int workers = 1;
  bool mask_history = false;
};

int run_eval(const EvalArgs& a) {
  ensure_out_dir(a.out_dir);
  auto [params, meta] = training::load_checkpoint(a.checkpoint);
  auto ds = data::load_dataset(a.data);
  if (ds.item_count() != meta.item_count)
    throw DataError("dataset item count does not match checkpoint");

  evaluation::EvalOptions opt;
  opt.strategy = a.strategy.empty() ? default_strategy(meta.train.objective)
                                    : reasoning::pool_strategy_from_name(a.strategy);
  opt.workers = a.workers;
  opt.mask_history = a.mask_history;

  evaluation::MetricsReport all;
  for (int step : parse_step_list(a.steps)) {
    auto report = evaluation::evaluate_split(params, meta.encoder, ds,
                                             data::split_from_name(a.split), step, opt);
    all.cells.insert(all.cells.end(), report.cells.begin(), report.cells.end());
  }
  report_io::write_metrics_csv(all, fs::path(a.out_dir) / "metrics.csv");
  report_io::write_text(report_io::metrics_to_json(all),
                        fs::path(a.out_dir) / "metrics.json");
  log_event({{"event", "eval_done"}, {"cells", all.cells.size()}});
  return 0;
}

struct GroupsArgs {
  std::string checkpoint, data, out_dir = ".", split = "test";
  std::string kind = "user_by_length";
  std::string steps = "0,1,2,3";
  int groups = 4;
  int workers = 1;
};

int run_groups(const GroupsArgs& a) {
  ensure_out_dir(a.out_dir);
  auto [params, meta] = training::load_checkpoint(a.checkpoint);
  auto ds = data::load_dataset(a.data);
  data::GroupKind kind;
  if (a.kind == "user_by_length") kind = data::GroupKind::kUserByLength;
  else if (a.kind == "item_by_popularity") kind = data::GroupKind::kItemByPopularity;
  else throw ArgumentError("unknown group kind: " + a.kind);

  auto assignment = data::assign_groups(ds, kind, a.groups);
  evaluation::EvalOptions opt;
  opt.strategy = default_strategy(meta.train.objective);
  opt.workers = a.workers;
  auto steps = parse_step_list(a.steps);
  auto report = evaluation::subgroup_report(params, meta.encoder, ds,
                                            data::split_from_name(a.split), assignment,
                                            steps, opt);
  report_io::write_metrics_csv(report, fs::path(a.out_dir) / "groups.csv");
  report_io::write_text(report_io::metrics_to_json(report),
                        fs::path(a.out_dir) / "groups.json");
  log_event({{"event", "groups_done"}, {"cells", report.cells.size()}});
  return 0;
}

struct OracleArgs {
  std::string checkpoint, data, out_dir = ".", split = "test";
  int k_max = -1;
  int workers = 1;
};

int run_oracle(const OracleArgs& a) {
  ensure_out_dir(a.out_dir);
  auto [params, meta] = training::load_checkpoint(a.checkpoint);
  auto ds = data::load_dataset(a.data);
  const int k_max = a.k_max >= 0 ? a.k_max : meta.encoder.k_max;

  evaluation::EvalOptions opt;
  opt.strategy = default_strategy(meta.train.objective);
  opt.workers = a.workers;
  auto report = evaluation::posthoc_oracle(params, meta.encoder, ds,
                                           data::split_from_name(a.split), k_max, opt);
  evaluation::MetricsReport merged = report.per_step;
  merged.cells.insert(merged.cells.end(), report.oracle.cells.begin(),
                      report.oracle.cells.end());
  report_io::write_metrics_csv(merged, fs::path(a.out_dir) / "oracle.csv");
  report_io::write_text(report_io::metrics_to_json(merged),
                        fs::path(a.out_dir) / "oracle.json");
  log_event({{"event", "oracle_done"}, {"k_max", k_max}});
  return 0;
}

struct TraceArgs {
  std::string checkpoint, data, out_dir = ".", split = "test", users;
  int k = -1;
};

int run_trace(const TraceArgs& a) {
  ensure_out_dir(a.out_dir);
  auto [params, meta] = training::load_checkpoint(a.checkpoint);
  auto ds = data::load_dataset(a.data);
  const int k = a.k >= 0 ? a.k : meta.encoder.k_max;

  std::vector<std::string> users = parse_name_list(a.users);
  std::vector<std::vector<long>> trajectories;
  for (const std::string& user : users) {
    const data::Example& ex =
        first_example_of_user(ds, user, data::split_from_name(a.split));
    trajectories.push_back(evaluation::rank_trajectory(params, meta.encoder, ex.prefix,
                                                       ex.target, k));
  }
  report_io::write_text(report_io::trajectories_to_csv(users, trajectories),
                        fs::path(a.out_dir) / "trajectories.csv");
  log_event({{"event", "trace_done"}, {"users", users.size()}});
  return 0;
}

int run_similarity(const TraceArgs& a) {
  ensure_out_dir(a.out_dir);
  auto [params, meta] = training::load_checkpoint(a.checkpoint);
  auto ds = data::load_dataset(a.data);
  const int k = a.k >= 0 ? a.k : meta.encoder.k_max;

  auto bound = encoder::ParamNodes<float>::bind(params, false);
  std::vector<std::string> users = parse_name_list(a.users);
  std::vector<numeric::Tensor<double>> matrices;
  for (const std::string& user : users) {
    const data::Example& ex =
        first_example_of_user(ds, user, data::split_from_name(a.split));
    auto states = reasoning::reason<float>(ex.prefix, k, bound, meta.encoder);
    std::vector<numeric::Tensor<double>> rows;
    rows.reserve(states.steps.size());
    for (const auto& s : states.steps) rows.push_back(s->val.cast<double>());
    matrices.push_back(evaluation::state_similarity(rows));
  }
  report_io::write_text(report_io::similarities_to_csv(users, matrices),
                        fs::path(a.out_dir) / "similarity.csv");
  log_event({{"event", "similarity_done"}, {"users", users.size()}});
  return 0;
}

struct BenchArgs {
  std::string checkpoint, data, out_dir = ".", split = "test";
  std::string steps = "0,1,2,3";
  long max_examples = 0;
};

int run_bench(const BenchArgs& a) {
  ensure_out_dir(a.out_dir);
  auto [params, meta] = training::load_checkpoint(a.checkpoint);
  auto ds = data::load_dataset(a.data);
  auto steps = parse_step_list(a.steps);
  const auto split = data::split_from_name(a.split);

  auto cached = evaluation::bench_latency(params, meta.encoder, ds, split, steps, true,
                                          static_cast<size_t>(a.max_examples));
  auto uncached = evaluation::bench_latency(params, meta.encoder, ds, split, steps, false,
                                            static_cast<size_t>(a.max_examples));
  report_io::write_latency_csv(cached, &uncached, fs::path(a.out_dir) / "latency.csv");
  for (const auto& row : cached.rows)
    log_event({{"event", "bench"},
               {"mode", "cached"},
               {"steps", row.steps},
               {"seconds", row.seconds},
               {"cost_increase_pct", row.cost_increase_pct}});
  for (const auto& row : uncached.rows)
    log_event({{"event", "bench"},
               {"mode", "uncached"},
               {"steps", row.steps},
               {"seconds", row.seconds},
               {"cost_increase_pct", row.cost_increase_pct}});
  return 0;
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::map<std::string, std::string> entries;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto begin = line.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    const auto end = line.find_last_not_of(" \t");
    line = line.substr(begin, end - begin + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t");
      return s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty config key", line_no);
    if (!config_schema().count(key)) throw ConfigError("unknown config key: " + key);
    entries[key] = value;
  }
  return entries;
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Latent multi-step reasoning for sequential recommendation"};
  app.require_subcommand(1);

  // --- synth ---
  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic interaction log (TSV)");
  synth_cmd->add_option("--users", synth.cfg.num_users, "number of users")
      ->capture_default_str();
  synth_cmd->add_option("--items", synth.cfg.num_items, "number of items")
      ->capture_default_str();
  synth_cmd->add_option("--regimes", synth.cfg.regimes, "hidden regime count")
      ->capture_default_str();
  synth_cmd->add_option("--len-min", synth.cfg.seq_len_min, "min sequence length")
      ->capture_default_str();
  synth_cmd->add_option("--len-max", synth.cfg.seq_len_max, "max sequence length")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.cfg.seed, "rng seed")->capture_default_str();
  synth_cmd->add_option("--p-first", synth.cfg.p_first, "first-order transition probability")
      ->capture_default_str();
  synth_cmd->add_option("--p-second", synth.cfg.p_second, "second-order transition probability")
      ->capture_default_str();
  synth_cmd
      ->add_flag("--identity-cycle", synth.cfg.identity_shift_maps,
                 "use shifted identity transition maps")
      ->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "output TSV path")->required();

  // --- prepare ---
  PrepareArgs prepare;
  auto* prepare_cmd =
      app.add_subcommand("prepare", "Filter, k-core and chronologically split a TSV log");
  prepare_cmd->add_option("--in", prepare.in, "input TSV log")->required();
  prepare_cmd->add_option("--out", prepare.out, "output dataset JSON")->required();
  prepare_cmd->add_option("--min-rating", prepare.min_rating, "keep ratings strictly above")
      ->capture_default_str();
  prepare_cmd->add_option("--k-core", prepare.k_core, "k-core filtering threshold")
      ->capture_default_str();
  prepare_cmd->add_option("--n-max", prepare.n_max, "prefix truncation length")
      ->capture_default_str();
  prepare_cmd->add_option("--t1", prepare.t1, "train/valid timestamp threshold");
  prepare_cmd->add_option("--t2", prepare.t2, "valid/test timestamp threshold");
  prepare_cmd->add_option("--t1-frac", prepare.t1_frac, "train/valid quantile when --t1 unset")
      ->capture_default_str();
  prepare_cmd->add_option("--t2-frac", prepare.t2_frac, "valid/test quantile when --t2 unset")
      ->capture_default_str();

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "Fit a model and write a checkpoint");
  std::string train_config_path;
  struct {
    std::optional<std::string> data, out_dir, objective, mask_mode;
    std::optional<int> d, layers, heads, n_max, k_max, k, batch_size, max_epochs, patience;
    std::optional<double> dropout, lambda, tau, alpha, gamma, tau_c, learning_rate;
    std::optional<uint64_t> seed;
  } tf;
  train_cmd->add_option("--config", train_config_path, "key=value run configuration file");
  train_cmd->add_option("--data", tf.data, "dataset JSON from `prepare`");
  train_cmd->add_option("--out-dir", tf.out_dir, "output directory (default .)");
  train_cmd->add_option("--objective", tf.objective, "base | erl | prl");
  train_cmd->add_option("--k", tf.k, "reasoning steps");
  train_cmd->add_option("--d", tf.d, "model width");
  train_cmd->add_option("--layers", tf.layers, "transformer blocks");
  train_cmd->add_option("--heads", tf.heads, "attention heads");
  train_cmd->add_option("--n-max", tf.n_max, "max item positions");
  train_cmd->add_option("--k-max", tf.k_max, "max reasoning positions");
  train_cmd->add_option("--mask-mode", tf.mask_mode, "causal | prefix_bidirectional");
  train_cmd->add_option("--dropout", tf.dropout, "training dropout rate");
  train_cmd->add_option("--lambda", tf.lambda, "ERL KL weight");
  train_cmd->add_option("--tau", tf.tau, "PRL base temperature");
  train_cmd->add_option("--alpha", tf.alpha, "PRL temperature decay rate");
  train_cmd->add_option("--gamma", tf.gamma, "PRL noise intensity");
  train_cmd->add_option("--tau-c", tf.tau_c, "PRL contrastive temperature");
  train_cmd->add_option("--learning-rate", tf.learning_rate, "Adam learning rate");
  train_cmd->add_option("--batch-size", tf.batch_size, "examples per optimizer step");
  train_cmd->add_option("--max-epochs", tf.max_epochs, "epoch cap");
  train_cmd->add_option("--patience", tf.patience, "early stopping patience");
  train_cmd->add_option("--seed", tf.seed, "rng seed");

  // --- eval ---
  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Rank the catalog and report NDCG/Recall");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--data", eval.data, "dataset JSON")->required();
  eval_cmd->add_option("--out-dir", eval.out_dir, "output directory")->capture_default_str();
  eval_cmd->add_option("--split", eval.split, "train | valid | test")->capture_default_str();
  eval_cmd->add_option("--steps", eval.steps, "comma-separated reasoning depths")
      ->capture_default_str();
  eval_cmd->add_option("--strategy", eval.strategy,
                       "last_step | mean_pool (default from objective)");
  eval_cmd->add_option("--workers", eval.workers, "evaluation worker threads")
      ->capture_default_str();
  eval_cmd->add_flag("--mask-history", eval.mask_history,
                     "exclude already-interacted items from ranking");

  // --- groups ---
  GroupsArgs groups;
  auto* groups_cmd = app.add_subcommand("groups", "Per-subgroup metrics across steps");
  groups_cmd->add_option("--checkpoint", groups.checkpoint, "model checkpoint")->required();
  groups_cmd->add_option("--data", groups.data, "dataset JSON")->required();
  groups_cmd->add_option("--out-dir", groups.out_dir, "output directory")
      ->capture_default_str();
  groups_cmd->add_option("--split", groups.split, "split to evaluate")->capture_default_str();
  groups_cmd->add_option("--kind", groups.kind, "user_by_length | item_by_popularity")
      ->capture_default_str();
  groups_cmd->add_option("--groups", groups.groups, "group count")->capture_default_str();
  groups_cmd->add_option("--steps", groups.steps, "comma-separated reasoning depths")
      ->capture_default_str();
  groups_cmd->add_option("--workers", groups.workers, "evaluation worker threads")
      ->capture_default_str();

  // --- oracle ---
  OracleArgs oracle;
  auto* oracle_cmd =
      app.add_subcommand("oracle", "Per-step metrics plus the hindsight best-step row");
  oracle_cmd->add_option("--checkpoint", oracle.checkpoint, "model checkpoint")->required();
  oracle_cmd->add_option("--data", oracle.data, "dataset JSON")->required();
  oracle_cmd->add_option("--out-dir", oracle.out_dir, "output directory")
      ->capture_default_str();
  oracle_cmd->add_option("--split", oracle.split, "split to evaluate")->capture_default_str();
  oracle_cmd->add_option("--k-max", oracle.k_max, "max depth (default: checkpoint k_max)");
  oracle_cmd->add_option("--workers", oracle.workers, "evaluation worker threads")
      ->capture_default_str();

  // --- trace ---
  TraceArgs trace;
  auto* trace_cmd = app.add_subcommand("trace", "Target rank per step for listed users");
  trace_cmd->add_option("--checkpoint", trace.checkpoint, "model checkpoint")->required();
  trace_cmd->add_option("--data", trace.data, "dataset JSON")->required();
  trace_cmd->add_option("--out-dir", trace.out_dir, "output directory")->capture_default_str();
  trace_cmd->add_option("--split", trace.split, "split to trace")->capture_default_str();
  trace_cmd->add_option("--users", trace.users, "comma-separated user ids")->required();
  trace_cmd->add_option("--k", trace.k, "reasoning depth (default: checkpoint k_max)");

  // --- similarity ---
  TraceArgs similarity;
  auto* sim_cmd =
      app.add_subcommand("similarity", "Cosine similarity between reasoning states");
  sim_cmd->add_option("--checkpoint", similarity.checkpoint, "model checkpoint")->required();
  sim_cmd->add_option("--data", similarity.data, "dataset JSON")->required();
  sim_cmd->add_option("--out-dir", similarity.out_dir, "output directory")
      ->capture_default_str();
  sim_cmd->add_option("--split", similarity.split, "split to sample")->capture_default_str();
  sim_cmd->add_option("--users", similarity.users, "comma-separated user ids")->required();
  sim_cmd->add_option("--k", similarity.k, "reasoning depth (default: checkpoint k_max)");

  // --- bench ---
  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Wall-clock latency per reasoning depth");
  bench_cmd->add_option("--checkpoint", bench.checkpoint, "model checkpoint")->required();
  bench_cmd->add_option("--data", bench.data, "dataset JSON")->required();
  bench_cmd->add_option("--out-dir", bench.out_dir, "output directory")->capture_default_str();
  bench_cmd->add_option("--split", bench.split, "split to time")->capture_default_str();
  bench_cmd->add_option("--steps", bench.steps, "comma-separated reasoning depths")
      ->capture_default_str();
  bench_cmd->add_option("--max-examples", bench.max_examples, "cap on timed examples (0 = all)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (prepare_cmd->parsed()) return run_prepare(prepare);
    if (train_cmd->parsed()) {
      RunSettings s;
      s.enc.dropout = 0.2;
      if (!train_config_path.empty())
        for (const auto& [key, value] : parse_config_file(train_config_path))
          apply_config_entry(s, key, value);
      // Flags override the config file.
      if (tf.data) s.data_path = *tf.data;
      if (tf.out_dir) s.out_dir = *tf.out_dir;
      if (tf.objective) s.train.objective = objectives::objective_from_name(*tf.objective);
      if (tf.mask_mode) s.enc.mask_mode = encoder::mask_mode_from_name(*tf.mask_mode);
      if (tf.d) s.enc.d = *tf.d;
      if (tf.layers) s.enc.layers = *tf.layers;
      if (tf.heads) s.enc.heads = *tf.heads;
      if (tf.n_max) s.enc.n_max = *tf.n_max;
      if (tf.k_max) s.enc.k_max = *tf.k_max;
      if (tf.k) s.train.k_steps = *tf.k;
      if (tf.dropout) s.enc.dropout = *tf.dropout;
      if (tf.lambda) s.train.lambda = *tf.lambda;
      if (tf.tau) s.train.tau = *tf.tau;
      if (tf.alpha) s.train.alpha = *tf.alpha;
      if (tf.gamma) s.train.gamma = *tf.gamma;
      if (tf.tau_c) s.train.tau_c = *tf.tau_c;
      if (tf.learning_rate) s.train.learning_rate = *tf.learning_rate;
      if (tf.batch_size) s.train.batch_size = *tf.batch_size;
      if (tf.max_epochs) s.train.max_epochs = *tf.max_epochs;
      if (tf.patience) s.train.patience = *tf.patience;
      if (tf.seed) s.train.seed = *tf.seed;
      // Default the encoder depth budget to the training depth.
      if (s.train.k_steps > s.enc.k_max && !tf.k_max) s.enc.k_max = s.train.k_steps;
      return run_train(s);
    }
    if (eval_cmd->parsed()) return run_eval(eval);
    if (groups_cmd->parsed()) return run_groups(groups);
    if (oracle_cmd->parsed()) return run_oracle(oracle);
    if (trace_cmd->parsed()) return run_trace(trace);
    if (sim_cmd->parsed()) return run_similarity(similarity);
    if (bench_cmd->parsed()) return run_bench(bench);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace rearec::cli
