#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace nhfm {

enum class FieldKind : std::uint8_t { kCategorical, kNumerical };

std::string_view to_string(FieldKind kind);
FieldKind field_kind_from_string(std::string_view name);

struct FieldConfig {
  std::string name;
  FieldKind kind = FieldKind::kCategorical;
};

/// One field of the feature dictionary. Categorical fields own
/// vocab.size() + 1 consecutive indices (the last one is the OOV slot);
/// numerical fields own exactly one index.
struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::kCategorical;
  std::vector<std::string> vocab;
  double min = 0.0;
  double max = 0.0;
  std::size_t offset = 0;

  std::size_t width() const noexcept {
    return kind == FieldKind::kCategorical ? vocab.size() + 1 : 1;
  }
  std::size_t oov_index() const noexcept { return offset + vocab.size(); }
};

using SchemaHash = std::array<std::uint8_t, 32>;
std::string hash_hex(const SchemaHash& hash);

/// Decoded view of one feature index.
struct FeatureLabel {
  std::string field;
  std::string token;  // vocab token, "<OOV>", or "<numeric>"
  FieldKind kind = FieldKind::kCategorical;
  bool oov = false;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FieldSpec> fields);

  const std::vector<FieldSpec>& fields() const noexcept { return fields_; }
  std::size_t n() const noexcept { return n_; }
  std::optional<std::size_t> field_position(std::string_view name) const;
  /// Index of `token` in a categorical field, or its OOV index.
  std::size_t token_index(std::size_t field, std::string_view token) const;
  double normalize(std::size_t field, double raw) const;

  FeatureLabel decode(std::size_t index) const;
  /// Field position owning a feature index.
  std::size_t field_of(std::size_t index) const;

  SchemaHash hash() const;
  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static FeatureSchema load(const std::filesystem::path& path);

 private:
  std::vector<FieldSpec> fields_;
  std::vector<std::unordered_map<std::string, std::size_t>> token_maps_;
  std::size_t n_ = 0;
};

using FieldValue = std::variant<std::monostate, std::string, double>;

struct RawRecord {
  std::string user;
  std::int64_t timestamp = 0;
  int label = 0;
  std::vector<FieldValue> values;  // aligned with RecordTable::columns
};

struct RecordTable {
  std::vector<std::string> columns;
  std::vector<RawRecord> rows;
};

struct FeatureEntry {
  std::uint32_t index = 0;
  double value = 0.0;
  friend bool operator==(const FeatureEntry&, const FeatureEntry&) = default;
};

/// Sparse event: entries sorted ascending by feature index.
struct Event {
  std::vector<FeatureEntry> entries;
  friend bool operator==(const Event&, const Event&) = default;
};

using EventPtr = std::shared_ptr<const Event>;

/// One training example. Real events are right-aligned; slot t_max-1 is the
/// prediction event. Padding slots hold null and have mask 0.
struct EventSequence {
  std::vector<EventPtr> events;
  std::vector<std::uint8_t> mask;
  int label = 0;
  std::string user;

  std::size_t t_max() const noexcept { return events.size(); }
  std::size_t real_count() const noexcept;
  std::size_t history_count() const noexcept { return real_count() - 1; }
  /// Slot of the earliest real event.
  std::size_t first_real() const noexcept { return t_max() - real_count(); }
  const Event& current() const { return *events.back(); }
};

/// Builds a left-padded sequence from chronologically ordered real events.
EventSequence make_sequence(std::span<const EventPtr> real_events, int label, std::string user,
                            std::size_t t_max);

enum class SplitTag : std::uint8_t { kTrain = 0, kValid = 1, kTest = 2 };
std::string_view to_string(SplitTag tag);
SplitTag split_tag_from_string(std::string_view name);

struct Dataset {
  std::shared_ptr<const FeatureSchema> schema;
  std::vector<EventSequence> sequences;
  SplitTag split = SplitTag::kTrain;

  std::size_t size() const noexcept { return sequences.size(); }
  std::size_t positives() const noexcept;
  std::size_t negatives() const noexcept { return size() - positives(); }
};

// --- schema fitting and encoding -----------------------------------------

/// Builds vocabularies (first-seen order) and min/max stats from `rows`.
/// Only rows whose `use_row` flag is set contribute (all rows when empty).
FeatureSchema fit_schema(const RecordTable& table, std::span<const FieldConfig> config,
                         std::span<const std::uint8_t> use_row = {});

/// Maps record columns onto schema fields once, then encodes many records.
class RecordEncoder {
 public:
  RecordEncoder(const FeatureSchema& schema, std::span<const std::string> columns);
  Event encode(const RawRecord& record) const;

 private:
  const FeatureSchema& schema_;
  std::vector<std::optional<std::size_t>> column_field_;
};

Event encode_event(const RawRecord& record, std::span<const std::string> columns,
                   const FeatureSchema& schema);

// --- sequences -------------------------------------------------------------

struct UserEvents {
  std::string user;
  std::vector<EventPtr> events;  // ascending timestamp
  std::vector<int> labels;
};

/// Groups rows by user (first-seen user order), stable-sorted by timestamp,
/// and encodes each row.
std::vector<UserEvents> group_by_user(const RecordTable& table, const FeatureSchema& schema);

/// Sliding window: one sequence per event, history = up to t_max-1 preceding
/// events of the same user.
std::vector<EventSequence> assemble_sequences(std::span<const UserEvents> users,
                                              std::size_t t_max);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

/// Per-user chronological allocation. Users with fewer than three sequences
/// go wholly to train; otherwise valid and test get floor(size * ratio), at
/// least one each, and train takes the rest.
SplitCounts split_counts(std::size_t user_size, const SplitRatios& ratios);

struct DatasetSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// `seed` is accepted for interface stability; the allocation rule is
/// deterministic and consumes no randomness.
DatasetSplits split(std::vector<EventSequence> sequences,
                    std::shared_ptr<const FeatureSchema> schema, const SplitRatios& ratios,
                    std::uint64_t seed);

/// Full pipeline: assigns records to splits chronologically per user, fits
/// the schema on train records only, encodes, assembles and splits.
DatasetSplits build_datasets(const RecordTable& table, std::span<const FieldConfig> config,
                             std::size_t t_max, const SplitRatios& ratios, std::uint64_t seed);

// --- sources ---------------------------------------------------------------

struct MovieLensFiles {
  std::filesystem::path ratings;
  std::filesystem::path users;
  std::filesystem::path movies;

  static MovieLensFiles in_directory(const std::filesystem::path& dir);
};

struct IngestStats {
  std::size_t lines = 0;
  std::size_t malformed = 0;
};

/// The nine categorical MovieLens fields, in schema order.
std::vector<FieldConfig> movielens_fields();

/// One record per rating; label = rating >= 4. Malformed lines are skipped
/// and counted; more than 1% malformed in any file aborts with DataError.
RecordTable ingest_movielens(const MovieLensFiles& files, IngestStats* stats = nullptr);

/// Newline-delimited JSON objects: flat field map plus `__user`, `__ts`,
/// `__label`.
RecordTable read_jsonl(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t num_sequences = 10000;
  std::size_t t_max = 10;
  std::size_t min_history = 0;
  std::size_t max_history = 9;
  std::vector<std::size_t> vocab_sizes = {12, 12, 8, 8};
  std::size_t numerical_fields = 1;
  /// Probability that a label follows the planted rule; otherwise it is
  /// drawn from Bernoulli(noise_positive_rate).
  double rule_strength = 1.0;
  double noise_positive_rate = 0.5;
  /// Planted rule: label 1 iff the current event carries token 0 of
  /// `current_field` AND one history event carries token 0 of `history_field`.
  std::size_t current_field = 0;
  std::size_t history_field = 1;
  double p_current_trigger = 0.5;
  double p_history_trigger = 0.5;
  SplitRatios ratios = {};

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

/// Generator bookkeeping for one split, aligned with Dataset::sequences.
struct SyntheticTruth {
  std::vector<std::uint8_t> rule_fires;
  /// Slot (0..t_max-1) of the history event carrying the history trigger,
  /// or -1 when none was planted.
  std::vector<int> trigger_slot;
};

struct SyntheticData {
  DatasetSplits splits;
  SyntheticTruth train_truth;
  SyntheticTruth valid_truth;
  SyntheticTruth test_truth;
  RecordTable records;  // raw events, one user per sequence
};

std::string synthetic_token(std::size_t field, std::size_t value);
std::string synthetic_field_name(std::size_t field);

SyntheticData synth_generate(const SyntheticSpec& spec, std::uint64_t seed);

// --- encoded dataset files ----------------------------------------------------

/// Binary layout (little-endian): magic "NHFMDS1", u8 split tag, 32-byte
/// schema hash, u32 t_max, u64 sequence count; then per sequence: varint
/// user length + bytes, u8 label, varint real-event count, and per event a
/// varint entry count followed by entries encoded as
/// varint((index_delta << 1) | unit_flag) with an f64 value when the flag is 0.
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path,
                     std::shared_ptr<const FeatureSchema> schema);

/// Decodes an event into human-readable (field, token) pairs.
std::vector<std::pair<std::string, std::string>> describe_event(const Event& event,
                                                                const FeatureSchema& schema);

}  // namespace nhfm
