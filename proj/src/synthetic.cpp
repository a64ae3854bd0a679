#include <cmath>
#include <random>

#include "nhfm/data.hpp"
#include "nhfm/error.hpp"

namespace nhfm {

std::string synthetic_field_name(std::size_t field) { return "f" + std::to_string(field); }

std::string synthetic_token(std::size_t field, std::size_t value) {
  return "f" + std::to_string(field) + "_v" + std::to_string(value);
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& why) { throw UsageError("invalid synthetic spec: " + why); };
  if (num_sequences == 0) fail("num_sequences must be positive");
  if (t_max == 0) fail("t_max must be positive");
  if (min_history > max_history) fail("min_history exceeds max_history");
  if (max_history + 1 > t_max) fail("max_history must be at most t_max - 1");
  if (vocab_sizes.size() < 2) fail("need at least two categorical fields");
  for (auto v : vocab_sizes) {
    if (v < 2) fail("vocab sizes must be at least 2");
  }
  if (current_field >= vocab_sizes.size() || history_field >= vocab_sizes.size()) {
    fail("rule fields out of range");
  }
  if (current_field == history_field) fail("rule fields must differ");
  for (double p : {rule_strength, noise_positive_rate, p_current_trigger, p_history_trigger}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("probabilities must lie in [0, 1]");
  }
  if (std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    fail("split ratios must sum to 1");
  }
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"num_sequences", num_sequences},
          {"t_max", t_max},
          {"min_history", min_history},
          {"max_history", max_history},
          {"vocab_sizes", vocab_sizes},
          {"numerical_fields", numerical_fields},
          {"rule_strength", rule_strength},
          {"noise_positive_rate", noise_positive_rate},
          {"current_field", current_field},
          {"history_field", history_field},
          {"p_current_trigger", p_current_trigger},
          {"p_history_trigger", p_history_trigger},
          {"split", {ratios.train, ratios.valid, ratios.test}}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.num_sequences = j.value("num_sequences", s.num_sequences);
    s.t_max = j.value("t_max", s.t_max);
    s.min_history = j.value("min_history", s.min_history);
    s.max_history = j.value("max_history", s.t_max - 1);
    s.vocab_sizes = j.value("vocab_sizes", s.vocab_sizes);
    s.numerical_fields = j.value("numerical_fields", s.numerical_fields);
    s.rule_strength = j.value("rule_strength", s.rule_strength);
    s.noise_positive_rate = j.value("noise_positive_rate", s.noise_positive_rate);
    s.current_field = j.value("current_field", s.current_field);
    s.history_field = j.value("history_field", s.history_field);
    s.p_current_trigger = j.value("p_current_trigger", s.p_current_trigger);
    s.p_history_trigger = j.value("p_history_trigger", s.p_history_trigger);
    if (j.contains("split")) {
      auto r = j.at("split").get<std::vector<double>>();
      if (r.size() != 3) throw UsageError("synthetic split needs three ratios");
      s.ratios = {r[0], r[1], r[2]};
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid synthetic spec: ") + e.what());
  }
  return s;
}

SyntheticData synth_generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> history_len(spec.min_history, spec.max_history);

  const std::size_t cat_fields = spec.vocab_sizes.size();
  RecordTable table;
  for (std::size_t f = 0; f < cat_fields; ++f) table.columns.push_back(synthetic_field_name(f));
  for (std::size_t f = 0; f < spec.numerical_fields; ++f) {
    table.columns.push_back("x" + std::to_string(f));
  }

  struct Plan {
    std::size_t first_row;
    std::size_t length;  // history + current
    int label;
    bool rule;
    int trigger_pos;  // index within the user's events, -1 when absent
  };
  std::vector<Plan> plans;
  plans.reserve(spec.num_sequences);

  for (std::size_t s = 0; s < spec.num_sequences; ++s) {
    const std::size_t hist = history_len(rng);
    Plan plan{table.rows.size(), hist + 1, 0, false, -1};
    std::vector<std::vector<std::size_t>> tokens(plan.length, std::vector<std::size_t>(cat_fields));
    for (auto& ev : tokens) {
      for (std::size_t f = 0; f < cat_fields; ++f) {
        // Token 0 of the two rule fields is reserved for planted triggers.
        const bool reserved = f == spec.current_field || f == spec.history_field;
        std::uniform_int_distribution<std::size_t> pick(reserved ? 1 : 0, spec.vocab_sizes[f] - 1);
        ev[f] = pick(rng);
      }
    }
    const bool current_trigger = unit(rng) < spec.p_current_trigger;
    if (current_trigger) tokens.back()[spec.current_field] = 0;
    bool history_trigger = false;
    if (hist > 0 && unit(rng) < spec.p_history_trigger) {
      std::uniform_int_distribution<std::size_t> where(0, hist - 1);
      const std::size_t j = where(rng);
      tokens[j][spec.history_field] = 0;
      plan.trigger_pos = static_cast<int>(j);
      history_trigger = true;
    }
    plan.rule = current_trigger && history_trigger;
    if (unit(rng) < spec.rule_strength) {
      plan.label = plan.rule ? 1 : 0;
    } else {
      plan.label = unit(rng) < spec.noise_positive_rate ? 1 : 0;
    }

    for (std::size_t t = 0; t < plan.length; ++t) {
      RawRecord rec;
      rec.user = "s" + std::to_string(s);
      rec.timestamp = static_cast<std::int64_t>(t);
      rec.label = t + 1 == plan.length ? plan.label : 0;
      for (std::size_t f = 0; f < cat_fields; ++f) {
        rec.values.emplace_back(synthetic_token(f, tokens[t][f]));
      }
      for (std::size_t f = 0; f < spec.numerical_fields; ++f) {
        rec.values.emplace_back(std::floor(unit(rng) * 10000.0) / 100.0);
      }
      table.rows.push_back(std::move(rec));
    }
    plans.push_back(plan);
  }

  // Split by sequence index; every synthetic sequence is its own user.
  const std::size_t n = spec.num_sequences;
  const std::size_t n_train = static_cast<std::size_t>(std::floor(n * spec.ratios.train + 1e-9));
  const std::size_t n_valid = static_cast<std::size_t>(std::floor(n * spec.ratios.valid + 1e-9));
  auto split_of = [&](std::size_t s) {
    return s < n_train ? SplitTag::kTrain : (s < n_train + n_valid ? SplitTag::kValid : SplitTag::kTest);
  };

  std::vector<std::uint8_t> train_rows(table.rows.size(), 0);
  for (std::size_t s = 0; s < n; ++s) {
    if (split_of(s) != SplitTag::kTrain) continue;
    for (std::size_t r = 0; r < plans[s].length; ++r) train_rows[plans[s].first_row + r] = 1;
  }

  std::vector<FieldConfig> config;
  for (std::size_t f = 0; f < cat_fields; ++f) {
    config.push_back({synthetic_field_name(f), FieldKind::kCategorical});
  }
  for (std::size_t f = 0; f < spec.numerical_fields; ++f) {
    config.push_back({"x" + std::to_string(f), FieldKind::kNumerical});
  }
  auto schema = std::make_shared<const FeatureSchema>(fit_schema(table, config, train_rows));
  RecordEncoder encoder(*schema, table.columns);

  SyntheticData out;
  out.splits.train = {schema, {}, SplitTag::kTrain};
  out.splits.valid = {schema, {}, SplitTag::kValid};
  out.splits.test = {schema, {}, SplitTag::kTest};
  for (std::size_t s = 0; s < n; ++s) {
    const Plan& plan = plans[s];
    std::vector<EventPtr> events;
    events.reserve(plan.length);
    for (std::size_t r = 0; r < plan.length; ++r) {
      events.push_back(std::make_shared<const Event>(encoder.encode(table.rows[plan.first_row + r])));
    }
    const SplitTag tag = split_of(s);
    Dataset& dst = tag == SplitTag::kTrain ? out.splits.train
                   : tag == SplitTag::kValid ? out.splits.valid
                                             : out.splits.test;
    SyntheticTruth& truth = tag == SplitTag::kTrain ? out.train_truth
                            : tag == SplitTag::kValid ? out.valid_truth
                                                      : out.test_truth;
    dst.sequences.push_back(make_sequence(events, plan.label, "s" + std::to_string(s), spec.t_max));
    truth.rule_fires.push_back(plan.rule ? 1 : 0);
    truth.trigger_slot.push_back(
        plan.trigger_pos < 0
            ? -1
            : static_cast<int>(spec.t_max - plan.length) + plan.trigger_pos);
  }
  out.records = std::move(table);
  return out;
}

}  // namespace nhfm
