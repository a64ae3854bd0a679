#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "nhfm/data.hpp"
#include "nhfm/error.hpp"

namespace nhfm {

std::size_t EventSequence::real_count() const noexcept {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::size_t Dataset::positives() const noexcept {
  return static_cast<std::size_t>(std::count_if(
      sequences.begin(), sequences.end(), [](const EventSequence& s) { return s.label == 1; }));
}

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrain:
      return "train";
    case SplitTag::kValid:
      return "valid";
    case SplitTag::kTest:
      return "test";
  }
  return "unknown";
}

SplitTag split_tag_from_string(std::string_view name) {
  if (name == "train") return SplitTag::kTrain;
  if (name == "valid") return SplitTag::kValid;
  if (name == "test") return SplitTag::kTest;
  throw UsageError("unknown split '" + std::string(name) + "'");
}

EventSequence make_sequence(std::span<const EventPtr> real_events, int label, std::string user,
                            std::size_t t_max) {
  if (t_max == 0) throw UsageError("t_max must be at least 1");
  if (real_events.empty()) throw DataError("sequence needs at least the prediction event");
  // Oldest events are truncated when the window is full.
  const std::size_t keep = std::min(real_events.size(), t_max);
  EventSequence seq;
  seq.events.assign(t_max, nullptr);
  seq.mask.assign(t_max, 0);
  const std::size_t skip = real_events.size() - keep;
  for (std::size_t i = 0; i < keep; ++i) {
    seq.events[t_max - keep + i] = real_events[skip + i];
    seq.mask[t_max - keep + i] = 1;
  }
  seq.label = label;
  seq.user = std::move(user);
  return seq;
}

std::vector<UserEvents> group_by_user(const RecordTable& table, const FeatureSchema& schema) {
  std::unordered_map<std::string, std::size_t> position;
  std::vector<std::vector<std::size_t>> rows_of_user;
  std::vector<std::string> users;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    auto [it, inserted] = position.emplace(table.rows[r].user, users.size());
    if (inserted) {
      users.push_back(table.rows[r].user);
      rows_of_user.emplace_back();
    }
    rows_of_user[it->second].push_back(r);
  }

  RecordEncoder encoder(schema, table.columns);
  std::vector<UserEvents> out(users.size());
  for (std::size_t u = 0; u < users.size(); ++u) {
    auto& rows = rows_of_user[u];
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return table.rows[a].timestamp < table.rows[b].timestamp;
    });
    out[u].user = users[u];
    out[u].events.reserve(rows.size());
    out[u].labels.reserve(rows.size());
    for (std::size_t r : rows) {
      out[u].events.push_back(std::make_shared<const Event>(encoder.encode(table.rows[r])));
      out[u].labels.push_back(table.rows[r].label);
    }
  }
  return out;
}

std::vector<EventSequence> assemble_sequences(std::span<const UserEvents> users,
                                              std::size_t t_max) {
  std::vector<EventSequence> out;
  std::size_t total = 0;
  for (const auto& u : users) total += u.events.size();
  out.reserve(total);
  for (const auto& u : users) {
    if (u.labels.size() != u.events.size()) {
      throw DataError("user '" + u.user + "' has mismatched event and label counts");
    }
    for (std::size_t j = 0; j < u.events.size(); ++j) {
      const std::size_t begin = j + 1 > t_max ? j + 1 - t_max : 0;
      std::span<const EventPtr> window(u.events.data() + begin, j + 1 - begin);
      out.push_back(make_sequence(window, u.labels[j], u.user, t_max));
    }
  }
  return out;
}

SplitCounts split_counts(std::size_t user_size, const SplitRatios& ratios) {
  SplitCounts c;
  if (user_size < 3) {
    c.train = user_size;
    return c;
  }
  const auto part = [&](double ratio) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(static_cast<double>(user_size) * ratio + 1e-9)));
  };
  c.valid = ratios.valid > 0 ? part(ratios.valid) : 0;
  c.test = ratios.test > 0 ? part(ratios.test) : 0;
  if (c.valid + c.test >= user_size) {
    c.valid = std::min<std::size_t>(c.valid, 1);
    c.test = std::min<std::size_t>(c.test, 1);
  }
  c.train = user_size - c.valid - c.test;
  return c;
}

namespace {

void check_ratios(const SplitRatios& r) {
  if (r.train < 0 || r.valid < 0 || r.test < 0 ||
      std::abs(r.train + r.valid + r.test - 1.0) > 1e-9) {
    throw UsageError("split ratios must be non-negative and sum to 1");
  }
}

}  // namespace

DatasetSplits split(std::vector<EventSequence> sequences,
                    std::shared_ptr<const FeatureSchema> schema, const SplitRatios& ratios,
                    std::uint64_t /*seed*/) {
  check_ratios(ratios);
  if (sequences.empty()) throw DataError("split: no sequences");

  std::unordered_map<std::string, std::size_t> position;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    auto [it, inserted] = position.emplace(sequences[i].user, members.size());
    if (inserted) members.emplace_back();
    members[it->second].push_back(i);
  }

  DatasetSplits out;
  out.train.split = SplitTag::kTrain;
  out.valid.split = SplitTag::kValid;
  out.test.split = SplitTag::kTest;
  out.train.schema = out.valid.schema = out.test.schema = schema;
  for (const auto& idx : members) {
    const SplitCounts c = split_counts(idx.size(), ratios);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      Dataset& dst = j < c.train ? out.train : (j < c.train + c.valid ? out.valid : out.test);
      dst.sequences.push_back(std::move(sequences[idx[j]]));
    }
  }
  return out;
}

DatasetSplits build_datasets(const RecordTable& table, std::span<const FieldConfig> config,
                             std::size_t t_max, const SplitRatios& ratios, std::uint64_t seed) {
  check_ratios(ratios);
  if (table.rows.empty()) throw DataError("no records to build datasets from");

  // Sequences are one-to-one with events, so the per-user chronological
  // split of sequences is decided on records first; this keeps schema
  // fitting on training events only.
  std::unordered_map<std::string, std::vector<std::size_t>> by_user;
  std::vector<std::string> order;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    auto [it, inserted] = by_user.try_emplace(table.rows[r].user);
    if (inserted) order.push_back(table.rows[r].user);
    it->second.push_back(r);
  }
  std::vector<std::uint8_t> is_train(table.rows.size(), 0);
  for (const auto& user : order) {
    auto& rows = by_user[user];
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return table.rows[a].timestamp < table.rows[b].timestamp;
    });
    const SplitCounts c = split_counts(rows.size(), ratios);
    for (std::size_t j = 0; j < c.train; ++j) is_train[rows[j]] = 1;
  }

  auto schema = std::make_shared<const FeatureSchema>(fit_schema(table, config, is_train));
  auto users = group_by_user(table, *schema);
  return split(assemble_sequences(users, t_max), schema, ratios, seed);
}

}  // namespace nhfm
