#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <openssl/sha.h>

#include "nhfm/data.hpp"
#include "nhfm/error.hpp"

namespace nhfm {

namespace {

constexpr std::string_view kOovToken = "<OOV>";
constexpr std::string_view kNumericToken = "<numeric>";

// Canonical token text for a field value; numbers print without a trailing
// ".0" when integral so JSON 3 and "3" land on the same vocab entry.
std::optional<std::string> token_of(const FieldValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  if (const auto* d = std::get_if<double>(&v)) {
    char buf[64];
    if (std::floor(*d) == *d && std::abs(*d) < 1e15) {
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(*d));
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", *d);
    }
    return std::string(buf);
  }
  return std::nullopt;
}

std::optional<double> number_of(const FieldValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* s = std::get_if<std::string>(&v)) {
    try {
      std::size_t used = 0;
      double d = std::stod(*s, &used);
      if (used == s->size() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(FieldKind kind) {
  return kind == FieldKind::kCategorical ? "categorical" : "numerical";
}

FieldKind field_kind_from_string(std::string_view name) {
  if (name == "categorical") return FieldKind::kCategorical;
  if (name == "numerical") return FieldKind::kNumerical;
  throw UsageError("unknown field kind '" + std::string(name) + "'");
}

std::string hash_hex(const SchemaHash& hash) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : hash) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

FeatureSchema::FeatureSchema(std::vector<FieldSpec> fields) : fields_(std::move(fields)) {
  std::size_t offset = 0;
  token_maps_.resize(fields_.size());
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    FieldSpec& spec = fields_[f];
    for (std::size_t g = 0; g < f; ++g) {
      if (fields_[g].name == spec.name) throw DataError("duplicate field name '" + spec.name + "'");
    }
    spec.offset = offset;
    if (spec.kind == FieldKind::kCategorical) {
      auto& map = token_maps_[f];
      for (std::size_t i = 0; i < spec.vocab.size(); ++i) {
        if (!map.emplace(spec.vocab[i], i).second) {
          throw DataError("duplicate token '" + spec.vocab[i] + "' in field '" + spec.name + "'");
        }
      }
    } else {
      spec.vocab.clear();
    }
    offset += spec.width();
  }
  n_ = offset;
}

std::optional<std::size_t> FeatureSchema::field_position(std::string_view name) const {
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    if (fields_[f].name == name) return f;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::token_index(std::size_t field, std::string_view token) const {
  const FieldSpec& spec = fields_.at(field);
  if (spec.kind != FieldKind::kCategorical) {
    throw UsageError("token lookup on numerical field '" + spec.name + "'");
  }
  const auto& map = token_maps_[field];
  auto it = map.find(std::string(token));
  return it == map.end() ? spec.oov_index() : spec.offset + it->second;
}

double FeatureSchema::normalize(std::size_t field, double raw) const {
  const FieldSpec& spec = fields_.at(field);
  if (spec.max <= spec.min) return 0.0;
  return std::clamp((raw - spec.min) / (spec.max - spec.min), 0.0, 1.0);
}

std::size_t FeatureSchema::field_of(std::size_t index) const {
  if (index >= n_) {
    throw DataError("feature index " + std::to_string(index) + " out of range (n = " +
                    std::to_string(n_) + ")");
  }
  auto it = std::upper_bound(fields_.begin(), fields_.end(), index,
                             [](std::size_t i, const FieldSpec& f) { return i < f.offset; });
  return static_cast<std::size_t>(std::distance(fields_.begin(), it)) - 1;
}

FeatureLabel FeatureSchema::decode(std::size_t index) const {
  const FieldSpec& spec = fields_[field_of(index)];
  FeatureLabel label;
  label.field = spec.name;
  label.kind = spec.kind;
  if (spec.kind == FieldKind::kNumerical) {
    label.token = kNumericToken;
  } else if (index == spec.oov_index()) {
    label.token = kOovToken;
    label.oov = true;
  } else {
    label.token = spec.vocab[index - spec.offset];
  }
  return label;
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json fields = nlohmann::json::array();
  for (const auto& f : fields_) {
    nlohmann::json jf = {{"name", f.name}, {"kind", to_string(f.kind)}, {"offset", f.offset}};
    if (f.kind == FieldKind::kCategorical) {
      jf["vocab"] = f.vocab;
    } else {
      jf["min"] = f.min;
      jf["max"] = f.max;
    }
    fields.push_back(std::move(jf));
  }
  return {{"format", "nhfm-schema"}, {"version", 1}, {"n", n_}, {"fields", std::move(fields)}};
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "nhfm-schema" || j.at("version") != 1) {
      throw FormatError("unsupported schema format/version");
    }
    std::vector<FieldSpec> fields;
    for (const auto& jf : j.at("fields")) {
      FieldSpec f;
      f.name = jf.at("name").get<std::string>();
      f.kind = field_kind_from_string(jf.at("kind").get<std::string>());
      if (f.kind == FieldKind::kCategorical) {
        f.vocab = jf.at("vocab").get<std::vector<std::string>>();
      } else {
        f.min = jf.at("min").get<double>();
        f.max = jf.at("max").get<double>();
      }
      fields.push_back(std::move(f));
    }
    FeatureSchema schema(std::move(fields));
    if (schema.n() != j.at("n").get<std::size_t>()) {
      throw FormatError("schema file declares n = " + j.at("n").dump() + " but fields give " +
                        std::to_string(schema.n()));
    }
    return schema;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed schema: ") + e.what());
  }
}

SchemaHash FeatureSchema::hash() const {
  const std::string canonical = to_json().dump();
  SchemaHash out{};
  SHA256(reinterpret_cast<const unsigned char*>(canonical.data()), canonical.size(), out.data());
  return out;
}

void FeatureSchema::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write schema file " + path.string());
  os << to_json().dump(2) << '\n';
}

FeatureSchema FeatureSchema::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read schema file " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("schema file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

FeatureSchema fit_schema(const RecordTable& table, std::span<const FieldConfig> config,
                         std::span<const std::uint8_t> use_row) {
  if (table.rows.empty()) throw DataError("fit_schema: no records");
  if (!use_row.empty() && use_row.size() != table.rows.size()) {
    throw UsageError("fit_schema: row filter length differs from record count");
  }

  std::vector<std::optional<std::size_t>> column_field(table.columns.size());
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    for (std::size_t f = 0; f < config.size(); ++f) {
      if (config[f].name == table.columns[c]) column_field[c] = f;
    }
    if (!column_field[c]) {
      throw DataError("fit_schema: field '" + table.columns[c] +
                      "' present in records but missing from config");
    }
  }

  std::vector<FieldSpec> specs(config.size());
  std::vector<std::unordered_map<std::string, std::size_t>> seen(config.size());
  std::vector<bool> has_stats(config.size(), false);
  for (std::size_t f = 0; f < config.size(); ++f) {
    specs[f].name = config[f].name;
    specs[f].kind = config[f].kind;
  }

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (!use_row.empty() && !use_row[r]) continue;
    const RawRecord& rec = table.rows[r];
    for (std::size_t c = 0; c < rec.values.size() && c < column_field.size(); ++c) {
      const std::size_t f = *column_field[c];
      FieldSpec& spec = specs[f];
      if (spec.kind == FieldKind::kCategorical) {
        auto token = token_of(rec.values[c]);
        if (!token) continue;
        if (seen[f].emplace(*token, spec.vocab.size()).second) spec.vocab.push_back(*token);
      } else {
        auto x = number_of(rec.values[c]);
        if (!x) continue;
        if (!has_stats[f]) {
          spec.min = spec.max = *x;
          has_stats[f] = true;
        } else {
          spec.min = std::min(spec.min, *x);
          spec.max = std::max(spec.max, *x);
        }
      }
    }
  }
  return FeatureSchema(std::move(specs));
}

RecordEncoder::RecordEncoder(const FeatureSchema& schema, std::span<const std::string> columns)
    : schema_(schema), column_field_(columns.size()) {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    column_field_[c] = schema.field_position(columns[c]);
  }
}

Event RecordEncoder::encode(const RawRecord& record) const {
  Event event;
  for (std::size_t c = 0; c < record.values.size() && c < column_field_.size(); ++c) {
    if (!column_field_[c]) continue;
    const std::size_t f = *column_field_[c];
    const FieldSpec& spec = schema_.fields()[f];
    if (spec.kind == FieldKind::kCategorical) {
      auto token = token_of(record.values[c]);
      if (!token) continue;
      event.entries.push_back({static_cast<std::uint32_t>(schema_.token_index(f, *token)), 1.0});
    } else {
      auto x = number_of(record.values[c]);
      if (!x) continue;
      event.entries.push_back({static_cast<std::uint32_t>(spec.offset), schema_.normalize(f, *x)});
    }
  }
  std::sort(event.entries.begin(), event.entries.end(),
            [](const FeatureEntry& a, const FeatureEntry& b) { return a.index < b.index; });
  return event;
}

Event encode_event(const RawRecord& record, std::span<const std::string> columns,
                   const FeatureSchema& schema) {
  return RecordEncoder(schema, columns).encode(record);
}

std::vector<std::pair<std::string, std::string>> describe_event(const Event& event,
                                                                const FeatureSchema& schema) {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(event.entries.size());
  for (const auto& e : event.entries) {
    FeatureLabel label = schema.decode(e.index);
    if (label.kind == FieldKind::kNumerical) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", e.value);
      label.token = buf;
    }
    out.emplace_back(std::move(label.field), std::move(label.token));
  }
  return out;
}

}  // namespace nhfm
