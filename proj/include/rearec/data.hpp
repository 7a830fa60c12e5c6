#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rearec/errors.hpp"
#include "rearec/rng.hpp"

namespace rearec::data {

// ---------------------------------------------------------------------------
// interaction logs
// ---------------------------------------------------------------------------

struct Event {
  std::string user;
  std::string item;
  double rating = 0.0;
  int64_t timestamp = 0;
};

struct InteractionLog {
  std::vector<Event> events;

  bool empty() const { return events.empty(); }
  size_t size() const { return events.size(); }
};

enum class LogFormat { kTsv };

// Parses `user \t item \t rating \t timestamp` lines (UTF-8, LF, no header).
// Duplicate (user, item, timestamp) triples collapse to the first occurrence.
InteractionLog load_interactions(const std::filesystem::path& path,
                                 LogFormat format = LogFormat::kTsv);

void save_interactions_tsv(const InteractionLog& log, const std::filesystem::path& path);

// Keeps events with rating > min_rating, then iteratively removes users and
// items with fewer than k_core events until a fixed point.
InteractionLog preprocess(const InteractionLog& log, double min_rating, int k_core);

// ---------------------------------------------------------------------------
// sequence dataset
// ---------------------------------------------------------------------------

enum class Split { kTrain, kValid, kTest };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct Example {
  int user = 0;                // dense user index
  std::vector<int> prefix;     // dense item indices, length in [1, n_max]
  int target = 0;              // dense item index
  Split split = Split::kTrain;
};

struct UserSequence {
  std::vector<int> items;          // dense item indices, chronological
  std::vector<int64_t> timestamps;
};

struct SequenceDataset {
  std::map<std::string, int> user_index;
  std::map<std::string, int> item_index;
  std::vector<std::string> user_ids;   // dense index -> id
  std::vector<std::string> item_ids;
  std::vector<UserSequence> sequences;
  // Per-user (train_end, valid_end): counts of events before t1 / before t2.
  std::vector<std::pair<int, int>> split_marks;
  std::vector<Example> examples;
  int64_t t1 = 0;
  int64_t t2 = 0;
  int n_max = 50;

  int user_count() const { return static_cast<int>(user_ids.size()); }
  int item_count() const { return static_cast<int>(item_ids.size()); }
  size_t example_count(Split s) const;
};

// Two-threshold chronological split: a target's own timestamp decides its
// split (< t1 train, [t1, t2) valid, >= t2 test). Every position with a
// successor yields one example, except test positions whose history already
// contains a test-window event; those are dropped so no test prefix leaks
// post-t2 information.
SequenceDataset chronological_split(const InteractionLog& log, int64_t t1, int64_t t2,
                                    int n_max = 50);

std::string dataset_to_json(const SequenceDataset& ds);
SequenceDataset dataset_from_json(const std::string& text);
void save_dataset(const SequenceDataset& ds, const std::filesystem::path& path);
SequenceDataset load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// subgroup assignment
// ---------------------------------------------------------------------------

enum class GroupKind { kUserByLength, kItemByPopularity };

struct GroupAssignment {
  GroupKind kind = GroupKind::kUserByLength;
  std::vector<int> group_of;  // entity dense index -> group id in [0, group_count)
  int group_count = 0;
};

// Entities are sorted by statistic ascending (users: full sequence length;
// items: train-window interaction count), ties broken by dense index, then
// cut into G contiguous blocks whose sizes differ by at most one, with the
// remainder going to the lowest groups.
GroupAssignment assign_groups(const SequenceDataset& ds, GroupKind kind, int group_count);

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

// Regime-switching second-order Markov generator. Each user walks a hidden
// regime chain; given regime r the next item is a_r[prev1] with probability
// p_first, b_r[prev2] with probability p_second, and uniform otherwise.
struct SynthConfig {
  int num_users = 500;
  int num_items = 200;
  int regimes = 3;
  int seq_len_min = 8;
  int seq_len_max = 16;
  uint64_t seed = 1;
  double p_first = 0.6;
  double p_second = 0.3;
  double regime_switch_prob = 0.1;
  // When set, the per-regime maps become the (i+1) mod N shift, so a single
  // regime with p_first = 1 degenerates to a pure item cycle.
  bool identity_shift_maps = false;
  int64_t time_span = 1'000'000;
};

InteractionLog synth_sequences(const SynthConfig& cfg);

// Empirical conditional entropy H(next | prev) in nats over observed bigrams.
double bigram_conditional_entropy(const InteractionLog& log);

}  // namespace rearec::data
