#include "rearec/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace rearec::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

InteractionLog load_interactions(const std::filesystem::path& path, LogFormat format) {
  if (format != LogFormat::kTsv) throw ArgumentError("unsupported log format");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open interaction log: " + path.string());

  InteractionLog log;
  std::set<std::tuple<std::string, std::string, int64_t>> seen;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 4> field;
    size_t start = 0;
    int column = 0;
    for (size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        if (column >= 4) throw ParseError("expected 4 tab-separated fields", line_no);
        field[column++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (column != 4) throw ParseError("expected 4 tab-separated fields", line_no);
    Event e;
    e.user = field[0];
    e.item = field[1];
    try {
      size_t pos = 0;
      e.rating = std::stod(field[2], &pos);
      if (pos != field[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("rating is not a number: '" + field[2] + "'", line_no);
    }
    try {
      size_t pos = 0;
      e.timestamp = std::stoll(field[3], &pos);
      if (pos != field[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("timestamp is not an integer: '" + field[3] + "'", line_no);
    }
    if (!std::isfinite(e.rating)) throw ParseError("rating must be finite", line_no);
    if (seen.emplace(e.user, e.item, e.timestamp).second) log.events.push_back(std::move(e));
  }
  if (log.empty()) throw DataError("interaction log is empty: " + path.string());
  return log;
}

void save_interactions_tsv(const InteractionLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write interaction log: " + path.string());
  std::ostringstream buf;
  for (const Event& e : log.events) {
    buf << e.user << '\t' << e.item << '\t';
    // Integral ratings print without a decimal point so round-trips are stable.
    if (e.rating == std::floor(e.rating) && std::abs(e.rating) < 1e15) {
      buf << static_cast<long long>(e.rating);
    } else {
      buf << e.rating;
    }
    buf << '\t' << e.timestamp << '\n';
  }
  out << buf.str();
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

InteractionLog preprocess(const InteractionLog& log, double min_rating, int k_core) {
  if (k_core < 0) throw ArgumentError("k_core must be >= 0");
  std::vector<Event> kept;
  kept.reserve(log.events.size());
  for (const Event& e : log.events)
    if (e.rating > min_rating) kept.push_back(e);

  // Iterate to fixed point: drop events of any user or item whose remaining
  // count falls below k_core.
  bool changed = true;
  while (changed && !kept.empty()) {
    changed = false;
    std::unordered_map<std::string, int> user_count, item_count;
    for (const Event& e : kept) {
      ++user_count[e.user];
      ++item_count[e.item];
    }
    std::vector<Event> next;
    next.reserve(kept.size());
    for (Event& e : kept) {
      if (user_count[e.user] < k_core || item_count[e.item] < k_core) {
        changed = true;
      } else {
        next.push_back(std::move(e));
      }
    }
    kept = std::move(next);
  }
  return InteractionLog{std::move(kept)};
}

// ---------------------------------------------------------------------------
// chronological split
// ---------------------------------------------------------------------------

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw ArgumentError("unknown split: " + name);
}

size_t SequenceDataset::example_count(Split s) const {
  size_t n = 0;
  for (const Example& e : examples)
    if (e.split == s) ++n;
  return n;
}

namespace {

void enumerate_examples(SequenceDataset& ds) {
  ds.examples.clear();
  for (int u = 0; u < ds.user_count(); ++u) {
    const UserSequence& seq = ds.sequences[u];
    const int n = static_cast<int>(seq.items.size());
    bool seen_test_event = false;
    for (int t = 0; t + 1 < n; ++t) {
      seen_test_event = seen_test_event || seq.timestamps[t] >= ds.t2;
      const int64_t target_ts = seq.timestamps[t + 1];
      Split split = Split::kTest;
      if (target_ts < ds.t1) {
        split = Split::kTrain;
      } else if (target_ts < ds.t2) {
        split = Split::kValid;
      } else if (seen_test_event) {
        // The history already crossed into the test window; evaluating this
        // position would condition on test-period data.
        continue;
      }
      Example ex;
      ex.user = u;
      ex.target = seq.items[t + 1];
      ex.split = split;
      const int prefix_len = std::min(t + 1, ds.n_max);
      ex.prefix.assign(seq.items.begin() + (t + 1 - prefix_len),
                       seq.items.begin() + (t + 1));
      ds.examples.push_back(std::move(ex));
    }
  }
}

}  // namespace

SequenceDataset chronological_split(const InteractionLog& log, int64_t t1, int64_t t2,
                                    int n_max) {
  if (t1 >= t2) throw ArgumentError("chronological_split: t1 must be < t2");
  if (n_max < 1) throw ArgumentError("chronological_split: n_max must be >= 1");

  SequenceDataset ds;
  ds.t1 = t1;
  ds.t2 = t2;
  ds.n_max = n_max;

  // Dense indices in first-appearance order.
  for (const Event& e : log.events) {
    if (ds.user_index.emplace(e.user, static_cast<int>(ds.user_ids.size())).second)
      ds.user_ids.push_back(e.user);
    if (ds.item_index.emplace(e.item, static_cast<int>(ds.item_ids.size())).second)
      ds.item_ids.push_back(e.item);
  }

  // Per-user events sorted by timestamp; stable sort keeps input order for ties.
  std::vector<std::vector<std::pair<int64_t, int>>> per_user(ds.user_ids.size());
  for (const Event& e : log.events)
    per_user[ds.user_index.at(e.user)].emplace_back(e.timestamp, ds.item_index.at(e.item));
  ds.sequences.resize(ds.user_ids.size());
  ds.split_marks.resize(ds.user_ids.size());
  for (size_t u = 0; u < per_user.size(); ++u) {
    auto& evs = per_user[u];
    std::stable_sort(evs.begin(), evs.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    UserSequence& seq = ds.sequences[u];
    int train_end = 0, valid_end = 0;
    for (const auto& [ts, item] : evs) {
      seq.timestamps.push_back(ts);
      seq.items.push_back(item);
      if (ts < t1) ++train_end;
      if (ts < t2) ++valid_end;
    }
    ds.split_marks[u] = {train_end, valid_end};
  }

  enumerate_examples(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// dataset (de)serialization
// ---------------------------------------------------------------------------

std::string dataset_to_json(const SequenceDataset& ds) {
  json j;
  j["format"] = "rearec-dataset";
  j["version"] = 1;
  j["t1"] = ds.t1;
  j["t2"] = ds.t2;
  j["n_max"] = ds.n_max;
  j["users"] = ds.user_ids;
  j["items"] = ds.item_ids;
  json seqs = json::array();
  for (const UserSequence& s : ds.sequences)
    seqs.push_back({{"items", s.items}, {"timestamps", s.timestamps}});
  j["sequences"] = std::move(seqs);
  return j.dump();
}

SequenceDataset dataset_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset is not valid JSON: ") + e.what());
  }
  if (!j.contains("format") || j["format"] != "rearec-dataset")
    throw FormatError("not a rearec dataset file");
  if (j.value("version", 0) != 1) throw FormatError("unsupported dataset version");

  SequenceDataset ds;
  ds.t1 = j.at("t1").get<int64_t>();
  ds.t2 = j.at("t2").get<int64_t>();
  ds.n_max = j.at("n_max").get<int>();
  ds.user_ids = j.at("users").get<std::vector<std::string>>();
  ds.item_ids = j.at("items").get<std::vector<std::string>>();
  for (size_t i = 0; i < ds.user_ids.size(); ++i)
    ds.user_index[ds.user_ids[i]] = static_cast<int>(i);
  for (size_t i = 0; i < ds.item_ids.size(); ++i)
    ds.item_index[ds.item_ids[i]] = static_cast<int>(i);
  for (const json& s : j.at("sequences")) {
    UserSequence seq;
    seq.items = s.at("items").get<std::vector<int>>();
    seq.timestamps = s.at("timestamps").get<std::vector<int64_t>>();
    if (seq.items.size() != seq.timestamps.size())
      throw FormatError("sequence items/timestamps length mismatch");
    ds.sequences.push_back(std::move(seq));
  }
  if (ds.sequences.size() != ds.user_ids.size())
    throw FormatError("sequence count does not match user count");
  ds.split_marks.resize(ds.sequences.size());
  for (size_t u = 0; u < ds.sequences.size(); ++u) {
    int train_end = 0, valid_end = 0;
    for (int64_t ts : ds.sequences[u].timestamps) {
      if (ts < ds.t1) ++train_end;
      if (ts < ds.t2) ++valid_end;
    }
    ds.split_marks[u] = {train_end, valid_end};
  }
  enumerate_examples(ds);
  return ds;
}

void save_dataset(const SequenceDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset: " + path.string());
  out << dataset_to_json(ds);
  if (!out) throw IoError("write failed: " + path.string());
}

SequenceDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return dataset_from_json(buf.str());
}

// ---------------------------------------------------------------------------
// subgroup assignment
// ---------------------------------------------------------------------------

GroupAssignment assign_groups(const SequenceDataset& ds, GroupKind kind, int group_count) {
  if (group_count < 1) throw ArgumentError("assign_groups: group count must be >= 1");
  const int entities =
      kind == GroupKind::kUserByLength ? ds.user_count() : ds.item_count();
  if (entities < group_count)
    throw ArgumentError("assign_groups: fewer entities than groups");

  std::vector<long> stat(entities, 0);
  if (kind == GroupKind::kUserByLength) {
    for (int u = 0; u < entities; ++u) stat[u] = static_cast<long>(ds.sequences[u].items.size());
  } else {
    // Popularity = interaction count inside the train window.
    for (int u = 0; u < ds.user_count(); ++u) {
      const UserSequence& seq = ds.sequences[u];
      const int train_end = ds.split_marks[u].first;
      for (int t = 0; t < train_end; ++t) ++stat[seq.items[t]];
    }
  }

  std::vector<int> order(entities);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (stat[a] != stat[b]) return stat[a] < stat[b];
    return a < b;
  });

  GroupAssignment ga;
  ga.kind = kind;
  ga.group_count = group_count;
  ga.group_of.assign(entities, 0);
  const int base = entities / group_count;
  const int remainder = entities % group_count;
  int pos = 0;
  for (int g = 0; g < group_count; ++g) {
    const int size = base + (g < remainder ? 1 : 0);
    for (int i = 0; i < size; ++i) ga.group_of[order[pos++]] = g;
  }
  return ga;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

InteractionLog synth_sequences(const SynthConfig& cfg) {
  if (cfg.num_items < cfg.regimes || cfg.regimes < 1)
    throw ArgumentError("synth_sequences: need num_items >= regimes >= 1");
  if (cfg.seq_len_min < 1 || cfg.seq_len_max < cfg.seq_len_min)
    throw ArgumentError("synth_sequences: bad sequence length range");
  if (cfg.p_first < 0 || cfg.p_second < 0 || cfg.p_first + cfg.p_second > 1.0)
    throw ArgumentError("synth_sequences: transition probabilities must sum to <= 1");

  Rng rng(cfg.seed);
  const int n = cfg.num_items;

  // Per-regime item maps for the first- and second-order transitions.
  std::vector<std::vector<int>> map_a(cfg.regimes), map_b(cfg.regimes);
  for (int r = 0; r < cfg.regimes; ++r) {
    map_a[r].resize(n);
    map_b[r].resize(n);
    for (int i = 0; i < n; ++i) {
      if (cfg.identity_shift_maps) {
        map_a[r][i] = (i + 1 + r) % n;
        map_b[r][i] = (i + 2 + r) % n;
      } else {
        map_a[r][i] = rng.uniform_int(n);
        map_b[r][i] = rng.uniform_int(n);
      }
    }
  }

  InteractionLog log;
  for (int u = 0; u < cfg.num_users; ++u) {
    const int len =
        cfg.seq_len_min + rng.uniform_int(cfg.seq_len_max - cfg.seq_len_min + 1);

    // Strictly increasing timestamps spread over the global span, so the
    // two-threshold chronological split cuts every user's history.
    std::vector<int64_t> times(len);
    for (int t = 0; t < len; ++t)
      times[t] = static_cast<int64_t>(rng.uniform01() * static_cast<double>(cfg.time_span));
    std::sort(times.begin(), times.end());
    for (int t = 1; t < len; ++t)
      if (times[t] <= times[t - 1]) times[t] = times[t - 1] + 1;

    int regime = rng.uniform_int(cfg.regimes);
    int prev1 = rng.uniform_int(n);
    int prev2 = rng.uniform_int(n);
    for (int t = 0; t < len; ++t) {
      int item;
      if (t == 0) {
        item = prev1;
      } else {
        if (cfg.regimes > 1 && rng.uniform01() < cfg.regime_switch_prob)
          regime = rng.uniform_int(cfg.regimes);
        const double roll = rng.uniform01();
        if (roll < cfg.p_first) {
          item = map_a[regime][prev1];
        } else if (roll < cfg.p_first + cfg.p_second) {
          item = map_b[regime][prev2];
        } else {
          item = rng.uniform_int(n);
        }
      }
      prev2 = prev1;
      prev1 = item;
      Event e;
      e.user = "u" + std::to_string(u);
      e.item = "i" + std::to_string(item);
      e.rating = 5.0;
      e.timestamp = times[t];
      log.events.push_back(std::move(e));
    }
  }
  return log;
}

double bigram_conditional_entropy(const InteractionLog& log) {
  // Group events per user in timestamp order, then tally (prev -> next).
  std::unordered_map<std::string, std::vector<std::pair<int64_t, std::string>>> per_user;
  for (const Event& e : log.events) per_user[e.user].emplace_back(e.timestamp, e.item);

  std::unordered_map<std::string, std::unordered_map<std::string, long>> counts;
  long total = 0;
  for (auto& [user, evs] : per_user) {
    std::stable_sort(evs.begin(), evs.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (size_t t = 0; t + 1 < evs.size(); ++t) {
      ++counts[evs[t].second][evs[t + 1].second];
      ++total;
    }
  }
  if (total == 0) return 0.0;

  double entropy = 0.0;
  for (const auto& [prev, nexts] : counts) {
    long row_total = 0;
    for (const auto& [next, c] : nexts) row_total += c;
    const double p_prev = static_cast<double>(row_total) / static_cast<double>(total);
    double h_row = 0.0;
    for (const auto& [next, c] : nexts) {
      const double p = static_cast<double>(c) / static_cast<double>(row_total);
      h_row -= p * std::log(p);
    }
    entropy += p_prev * h_row;
  }
  return entropy;
}

}  // namespace rearec::data
