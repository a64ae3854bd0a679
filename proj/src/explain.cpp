#include "nhfm/explain.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "nhfm/error.hpp"

namespace nhfm {
namespace {

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string fmt_weight(double w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.6f", w);
  return buf;
}

std::string join_fields(const std::vector<std::pair<std::string, std::string>>& fields) {
  std::string out;
  for (const auto& [name, value] : fields) {
    if (!out.empty()) out += ' ';
    out += name + '=' + value;
  }
  return out;
}

nlohmann::json fields_json(const std::vector<std::pair<std::string, std::string>>& fields) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, value] : fields) j[name] = value;
  return j;
}

}  // namespace

std::string_view to_string(RankDirection d) {
  return d == RankDirection::kHighRisk ? "high" : "low";
}

RankDirection direction_from_string(std::string_view name) {
  if (name == "high") return RankDirection::kHighRisk;
  if (name == "low") return RankDirection::kLowRisk;
  throw UsageError("unknown ranking direction '" + std::string(name) + "' (expected high or low)");
}

nlohmann::json FeatureRanking::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries) {
    rows.push_back({{"index", e.index},
                    {"field", e.field},
                    {"token", e.token},
                    {"kind", to_string(e.kind)},
                    {"weight", e.weight}});
  }
  return {{"direction", to_string(direction)}, {"features", rows}};
}

std::string FeatureRanking::table() const {
  std::size_t field_w = 5, token_w = 5;
  for (const auto& e : entries) {
    field_w = std::max(field_w, e.field.size());
    token_w = std::max(token_w, e.token.size());
  }
  std::string out = (direction == RankDirection::kHighRisk ? "High risk" : "Low risk");
  out += '\n';
  out += pad("rank", 6) + pad("field", field_w + 2) + pad("token", token_w + 2) + "weight\n";
  bool numeric = false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    out += pad(std::to_string(i + 1), 6) + pad(e.field, field_w + 2) + pad(e.token, token_w + 2) +
           fmt_weight(e.weight);
    if (e.kind == FieldKind::kNumerical) {
      out += " *";
      numeric = true;
    }
    out += '\n';
  }
  if (numeric) out += "* weight scales the min-max normalized value of the field\n";
  return out;
}

FeatureRanking top_wide_features(const Checkpoint& checkpoint, const FeatureSchema& schema,
                                 std::size_t count, RankDirection direction) {
  if (checkpoint.schema_hash != schema.hash()) {
    throw DataError("top_wide_features: checkpoint schema hash " + hash_hex(checkpoint.schema_hash) +
                    " does not match " + hash_hex(schema.hash()));
  }
  const Tensor& w = checkpoint.params[checkpoint.params.layout().wide_w];
  if (w.size() != schema.n()) {
    throw DataError("top_wide_features: " + std::to_string(w.size()) + " wide weights for " +
                    std::to_string(schema.n()) + " features");
  }
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  if (direction == RankDirection::kHighRisk) {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return w[a] > w[b]; });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return w[a] < w[b]; });
  }
  order.resize(std::min(count, order.size()));

  FeatureRanking ranking;
  ranking.direction = direction;
  for (std::size_t idx : order) {
    FeatureLabel label = schema.decode(idx);
    ranking.entries.push_back({idx, label.field, label.token, label.kind, w[idx]});
  }
  return ranking;
}

nlohmann::json EventImportanceReport::to_json() const {
  nlohmann::json events_json = nlohmann::json::array();
  for (const auto& e : events) {
    events_json.push_back(
        {{"slot", e.slot}, {"weight", e.weight}, {"rank", e.rank}, {"fields", fields_json(e.fields)}});
  }
  return {{"user", user},
          {"label", label},
          {"probability", probability},
          {"history", events_json},
          {"current", fields_json(current)}};
}

std::string EventImportanceReport::table() const {
  char head[160];
  std::snprintf(head, sizeof head, "user %s  label %d  predicted %.4f\n", user.c_str(), label,
                probability);
  std::string out = head;
  out += pad("slot", 6) + pad("rank", 6) + pad("weight", 10) + "event\n";
  for (const auto& e : events) {
    char w[32];
    std::snprintf(w, sizeof w, "%.4f", e.weight);
    out += pad(std::to_string(e.slot), 6) + pad(std::to_string(e.rank), 6) + pad(w, 10) +
           join_fields(e.fields) + '\n';
  }
  out += pad("cur", 6) + pad("-", 6) + pad("-", 10) + join_fields(current) + '\n';
  return out;
}

EventImportanceReport attention_report(const Checkpoint& checkpoint, const EventSequence& sequence,
                                       const FeatureSchema& schema) {
  if (!checkpoint.model.has_beta()) {
    throw UsageError("attention_report: variant " + std::string(to_string(checkpoint.model.variant)) +
                     " has no self-importance attention");
  }
  if (checkpoint.schema_hash != schema.hash()) {
    throw DataError("attention_report: checkpoint was trained on a different schema");
  }
  const ForwardCache cache = predict(checkpoint.params, checkpoint.model, sequence);

  EventImportanceReport report;
  report.user = sequence.user;
  report.label = sequence.label;
  report.probability = cache.probability;
  report.current = describe_event(sequence.current(), schema);

  const std::size_t real_history = cache.attention_weights.size();
  std::vector<std::size_t> by_weight(real_history);
  std::iota(by_weight.begin(), by_weight.end(), 0);
  std::stable_sort(by_weight.begin(), by_weight.end(), [&](auto a, auto b) {
    return cache.attention_weights[a] > cache.attention_weights[b];
  });
  std::vector<std::size_t> rank(real_history);
  for (std::size_t r = 0; r < real_history; ++r) rank[by_weight[r]] = r + 1;

  for (std::size_t i = 0; i < real_history; ++i) {
    const std::size_t slot = cache.first_real + i;
    report.events.push_back({slot, describe_event(*sequence.events[slot], schema),
                             cache.attention_weights[i], rank[i]});
  }
  return report;
}

}  // namespace nhfm
