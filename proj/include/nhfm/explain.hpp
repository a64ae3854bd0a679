#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nhfm/data.hpp"
#include "nhfm/training.hpp"

namespace nhfm {

enum class RankDirection { kHighRisk, kLowRisk };

std::string_view to_string(RankDirection d);
RankDirection direction_from_string(std::string_view name);

struct RankedFeature {
  std::size_t index = 0;
  std::string field;
  std::string token;
  FieldKind kind = FieldKind::kCategorical;
  double weight = 0.0;
};

struct FeatureRanking {
  RankDirection direction = RankDirection::kHighRisk;
  std::vector<RankedFeature> entries;

  nlohmann::json to_json() const;
  /// Aligned table: rank, field, token, weight. Numerical rows are marked
  /// since their weight multiplies the min-max normalized value.
  std::string table() const;
};

/// Orders all wide weights by raw value (descending for high risk,
/// ascending for low risk; ties keep index order) and keeps the first
/// `count`. Throws DataError when the checkpoint was trained on another schema.
FeatureRanking top_wide_features(const Checkpoint& checkpoint, const FeatureSchema& schema,
                                 std::size_t count, RankDirection direction);

struct EventImportance {
  std::size_t slot = 0;  // position within the padded window
  std::vector<std::pair<std::string, std::string>> fields;
  double weight = 0.0;
  std::size_t rank = 0;  // 1 = largest weight
};

struct EventImportanceReport {
  std::string user;
  int label = 0;
  double probability = 0.0;
  std::vector<EventImportance> events;  // chronological
  std::vector<std::pair<std::string, std::string>> current;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Self-importance weights of the real history events, taken from the
/// forward cache. Throws UsageError for variant alpha, which has no attention.
EventImportanceReport attention_report(const Checkpoint& checkpoint, const EventSequence& sequence,
                                       const FeatureSchema& schema);

}  // namespace nhfm
