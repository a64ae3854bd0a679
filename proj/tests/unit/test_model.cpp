#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nhfm/error.hpp"
#include "nhfm/model.hpp"
#include "../support/oracles.hpp"

using namespace nhfm;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t({r, c});
  for (double& v : t.data()) v = u(rng);
  return t;
}

Tensor random_vector(std::size_t n, std::mt19937_64& rng, double bound = 1.0) {
  return random_matrix(n, 1, rng, bound).reshaped({n});
}

oracle::Mat to_mat(const Tensor& t) {
  oracle::Mat m(t.rows(), oracle::Vec(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

oracle::Vec to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void expect_near_vec(const Tensor& got, const oracle::Vec& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "at " << i;
}

EventPtr event(std::vector<FeatureEntry> entries) {
  return std::make_shared<const Event>(Event{std::move(entries)});
}

ModelConfig small_config(Variant v, std::size_t n = 12, std::size_t t_max = 5) {
  ModelConfig c;
  c.variant = v;
  c.n_features = n;
  c.k = 4;
  c.h = 3;
  c.mlp = {6, 1};
  c.t_max = t_max;
  return c;
}

/// Sequence with `history` random past events plus a current event.
EventSequence random_sequence(std::size_t history, std::size_t t_max, std::size_t n,
                              std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> idx(0, n - 1);
  std::uniform_real_distribution<double> val(0.2, 1.0);
  std::vector<EventPtr> evs;
  for (std::size_t t = 0; t <= history; ++t) {
    std::vector<FeatureEntry> entries;
    std::vector<std::size_t> used;
    while (used.size() < 3) {
      const std::size_t i = idx(rng);
      if (std::find(used.begin(), used.end(), i) != used.end()) continue;
      used.push_back(i);
      entries.push_back({static_cast<std::uint32_t>(i), used.size() == 3 ? val(rng) : 1.0});
    }
    std::sort(entries.begin(), entries.end(),
              [](const FeatureEntry& a, const FeatureEntry& b) { return a.index < b.index; });
    evs.push_back(event(std::move(entries)));
  }
  return make_sequence(evs, 1, "u", t_max);
}

}  // namespace

// --- event extractor --------------------------------------------------------

TEST(EmbedEvent, RescalesRows) {
  Tape tape;
  Tensor table = Tensor::matrix(3, 2, {1, 1, 2, 4, 5, 6});
  Var v = tape.parameter(table, 0);
  Var u = embed_event(v, Event{{{1, 0.5}, {2, 1.0}}});
  EXPECT_EQ(u.value(), Tensor::matrix(2, 2, {1, 2, 5, 6}));
  Var empty = embed_event(v, Event{});
  EXPECT_EQ(empty.value().rows(), 0u);
  Var single = event_fm(embed_event(v, Event{{{2, 1.0}}}));
  EXPECT_EQ(single.value(), Tensor::vector({0, 0}));
}

TEST(EventFm, SinglePairIsHadamard) {
  Tape tape;
  Var u = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(event_fm(u).value(), Tensor::vector({3, 8}));
  Var none = tape.constant(Tensor({0, 2}));
  EXPECT_EQ(event_fm(none).value(), Tensor::vector({0, 0}));
}

TEST(EventFm, PoolingIdentityMatchesDoubleSum) {
  std::mt19937_64 rng(11);
  for (std::size_t m = 0; m <= 8; ++m) {
    for (std::size_t k = 1; k <= 8; ++k) {
      Tape tape;
      const Tensor u = random_matrix(m, k, rng);
      const Tensor fm = event_fm(tape.constant(u)).value();
      const oracle::Vec want = m == 0 ? oracle::Vec(k, 0.0) : oracle::pairwise_hadamard(to_mat(u), k);
      expect_near_vec(fm, want, 1e-10);
    }
  }
}

TEST(EventFm, SegmentsMatchPerEvent) {
  std::mt19937_64 rng(12);
  const std::vector<std::size_t> lengths = {3, 0, 1, 5};
  const Tensor all = random_matrix(9, 4, rng);
  Tape tape;
  const Tensor seg = event_fm_segments(tape.constant(all), lengths).value();
  const oracle::Mat rows_all = to_mat(all);
  std::size_t begin = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    const auto first = rows_all.begin() + static_cast<std::ptrdiff_t>(begin);
    oracle::Mat rows(first, first + static_cast<std::ptrdiff_t>(lengths[s]));
    const oracle::Vec want = oracle::pairwise_hadamard(rows, 4);
    for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(seg.at(s, d), want[d], 1e-10);
    begin += lengths[s];
  }
}

// --- sequence extractor -----------------------------------------------------------

TEST(SequenceFm, Examples) {
  Tape tape;
  const std::uint8_t one[] = {0, 1};
  EXPECT_EQ(sequence_fm(tape.constant(Tensor::matrix(2, 2, {9, 9, 1, 2})), one).value(),
            Tensor::vector({0, 0}));
  const std::uint8_t two[] = {1, 1};
  EXPECT_EQ(sequence_fm(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})), two).value(),
            Tensor::vector({0, 0}));
  const std::uint8_t bad[] = {1};
  EXPECT_THROW(sequence_fm(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})), bad), DimensionError);
}

TEST(SequenceFm, MaskedDoubleSum) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + trial % 8, k = 1 + (trial * 3) % 8;
    std::vector<std::uint8_t> q(m);
    for (auto& x : q) x = rng() % 2;
    const Tensor e = random_matrix(m, k, rng);
    Tape tape;
    expect_near_vec(sequence_fm(tape.constant(e), q).value(),
                    oracle::masked_pairwise_hadamard(to_mat(e), q, k), 1e-10);
  }
}

TEST(SequenceFm, AddsNoParameters) {
  // The alpha branch differs from the beta-free, alpha-free layout only by
  // the first MLP layer widening by k.
  ModelConfig base = small_config(Variant::kAlpha);
  const Parameters alpha = Parameters::zeros(base);
  EXPECT_EQ(alpha.scalar_count(ParamGroup::kAttention), 0u);
  EXPECT_EQ(alpha.scalar_count(ParamGroup::kLstm), 0u);
  const std::size_t first_layer_extra = base.k * base.mlp[0];
  const std::size_t without_alpha = base.n_features * base.k + base.n_features + 1 +
                                    base.k * base.mlp[0] + base.mlp[0] + base.mlp[0] * 1 + 1;
  EXPECT_EQ(alpha.scalar_count(), without_alpha + first_layer_extra);
}

TEST(SelfImportance, Examples) {
  std::mt19937_64 rng(14);
  const std::size_t k = 3;
  Tape tape;
  std::vector<Tensor> store;
  for (int f = 0; f < 3; ++f) store.push_back(random_matrix(k, k, rng));
  for (int f = 0; f < 3; ++f) store.push_back(random_vector(k, rng));
  AttentionVars attn;
  for (int f = 0; f < 3; ++f) {
    attn.w[f] = tape.constant(store[f]);
    attn.b[f] = tape.constant(store[3 + f]);
  }
  const Tensor row = random_matrix(1, k, rng);

  const std::uint8_t single[] = {0, 1};
  Tensor padded({2, k});
  for (std::size_t d = 0; d < k; ++d) padded.row(1)[d] = row.row(0)[d];
  const SelfImportance one = self_importance(tape.constant(padded), single, attn);
  EXPECT_EQ(one.weights.value(), Tensor::vector({1.0}));
  oracle::Vec f3 = oracle::affine(to_vec(row), to_mat(store[2]), to_vec(store[5]));
  for (double& v : f3) v = std::max(v, 0.0);
  expect_near_vec(one.s_self.value(), f3, 1e-12);

  Tensor twin({2, k});
  for (std::size_t d = 0; d < k; ++d) twin.row(0)[d] = twin.row(1)[d] = row.row(0)[d];
  const std::uint8_t both[] = {1, 1};
  EXPECT_EQ(self_importance(tape.constant(twin), both, attn).weights.value(),
            Tensor::vector({0.5, 0.5}));

  const std::uint8_t none[] = {0, 0};
  EXPECT_THROW(self_importance(tape.constant(twin), none, attn), DataError);
}

TEST(SelfImportance, MatchesScalarLoops) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 2 + trial % 4;
    Tape tape;
    oracle::Mat w[3];
    oracle::Vec b[3];
    AttentionVars attn;
    std::vector<Tensor> keep;
    keep.reserve(6);
    for (int f = 0; f < 3; ++f) {
      keep.push_back(random_matrix(k, k, rng, 2.0));
      w[f] = to_mat(keep.back());
      attn.w[f] = tape.constant(keep.back());
      keep.push_back(random_vector(k, rng));
      b[f] = to_vec(keep.back());
      attn.b[f] = tape.constant(keep.back());
    }
    // Four real events after one padded row.
    const Tensor hist = random_matrix(5, k, rng);
    const std::uint8_t mask[] = {0, 1, 1, 1, 1};
    const SelfImportance si = self_importance(tape.constant(hist), mask, attn);
    oracle::Mat real = to_mat(hist);
    real.erase(real.begin());
    const oracle::Attention want = oracle::attention(real, w, b);
    expect_near_vec(si.logits.value(), want.logits, 1e-12);
    expect_near_vec(si.weights.value(), want.weights, 1e-12);
    expect_near_vec(si.s_self.value(), want.s_self, 1e-12);
    double total = 0.0;
    for (double a : si.weights.value().data()) total += a;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_EQ(si.real_rows, (std::vector<std::size_t>{1, 2, 3, 4}));
  }
}

TEST(SelfImportance, StaysNormalizedForLargeInputs) {
  std::mt19937_64 rng(16);
  const std::size_t k = 4;
  Tape tape;
  AttentionVars attn;
  std::vector<Tensor> keep;
  keep.reserve(6);
  for (int f = 0; f < 3; ++f) {
    keep.push_back(random_matrix(k, k, rng, 50.0));
    attn.w[f] = tape.constant(keep.back());
    keep.push_back(random_vector(k, rng, 50.0));
    attn.b[f] = tape.constant(keep.back());
  }
  const std::uint8_t mask[] = {1, 1, 1, 1, 1, 1};
  const SelfImportance si = self_importance(tape.constant(random_matrix(6, k, rng, 100.0)), mask, attn);
  double total = 0.0;
  for (double a : si.weights.value().data()) {
    EXPECT_TRUE(std::isfinite(a));
    EXPECT_GE(a, 0.0);
    total += a;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Bilstm, ZeroWeightsGiveZero) {
  const std::size_t k = 3, h = 2;
  Tape tape;
  LstmVars p{tape.constant(Tensor({k, 4 * h})), tape.constant(Tensor({h, 4 * h})),
             tape.constant(Tensor({4 * h}))};
  std::mt19937_64 rng(17);
  const std::uint8_t mask[] = {1, 1, 1};
  EXPECT_EQ(bilstm(tape.constant(random_matrix(3, k, rng)), mask, p, p).value(), Tensor({h}));
  const std::uint8_t none[] = {0, 0, 0};
  EXPECT_EQ(bilstm(tape.constant(random_matrix(3, k, rng)), none, p, p).value(), Tensor({h}));
}

TEST(Bilstm, MatchesScalarRecurrence) {
  std::mt19937_64 rng(18);
  for (const auto [k, h] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 2}}) {
    Tape tape;
    const Tensor fwx = random_matrix(k, 4 * h, rng), fwh = random_matrix(h, 4 * h, rng),
                 fb = random_vector(4 * h, rng);
    const Tensor bwx = random_matrix(k, 4 * h, rng), bwh = random_matrix(h, 4 * h, rng),
                 bb = random_vector(4 * h, rng);
    LstmVars fwd{tape.constant(fwx), tape.constant(fwh), tape.constant(fb)};
    LstmVars bwd{tape.constant(bwx), tape.constant(bwh), tape.constant(bb)};
    // Padded first row is skipped; two real steps follow.
    const Tensor hist = random_matrix(3, k, rng);
    const std::uint8_t mask[] = {0, 1, 1};
    const Tensor got = bilstm(tape.constant(hist), mask, fwd, bwd).value();
    const oracle::Mat all = to_mat(hist);
    const oracle::Mat steps = {all[1], all[2]};
    const oracle::Mat reversed = {all[2], all[1]};
    const oracle::Vec hf = oracle::lstm(steps, to_mat(fwx), to_mat(fwh), to_vec(fb));
    const oracle::Vec hb = oracle::lstm(reversed, to_mat(bwx), to_mat(bwh), to_vec(bb));
    oracle::Vec want(h);
    for (std::size_t u = 0; u < h; ++u) want[u] = hf[u] + hb[u];
    expect_near_vec(got, want, 1e-12);

    // A single event is one step of each direction.
    const std::uint8_t single[] = {0, 0, 1};
    const Tensor one = bilstm(tape.constant(hist), single, fwd, bwd).value();
    const oracle::Vec sf = oracle::lstm({all[2]}, to_mat(fwx), to_mat(fwh), to_vec(fb));
    const oracle::Vec sb = oracle::lstm({all[2]}, to_mat(bwx), to_mat(bwh), to_vec(bb));
    for (std::size_t u = 0; u < h; ++u) EXPECT_NEAR(one[u], sf[u] + sb[u], 1e-12);
  }
}

TEST(Wide, Examples) {
  Tape tape;
  const Tensor w = Tensor::matrix(3, 1, {0.5, -2.0, 4.0});
  const Tensor b = Tensor::scalar(0.25);
  Var wv = tape.constant(w), bv = tape.constant(b);
  const std::vector<EventPtr> empty = {nullptr, event({}), event({})};
  EXPECT_EQ(wide(wv, bv, empty).value().item(), 0.25);
  const std::vector<EventPtr> twice = {nullptr, event({{1, 1.0}}), event({{1, 1.0}})};
  EXPECT_EQ(wide(wv, bv, twice).value().item(), 2 * -2.0 + 0.25);
}

TEST(Wide, MatchesDenseDotProduct) {
  std::mt19937_64 rng(19);
  const std::size_t n = 15, t_max = 6;
  const Tensor w = random_matrix(n, 1, rng);
  const EventSequence seq = random_sequence(3, t_max, n, rng);
  Tape tape;
  const double got = wide(tape.constant(w), tape.constant(Tensor::scalar(0.7)), seq.events).value().item();
  std::vector<double> flat(n * t_max, 0.0);
  for (std::size_t t = 0; t < t_max; ++t) {
    if (!seq.events[t]) continue;
    for (const auto& e : seq.events[t]->entries) flat[t * n + e.index] = e.value;
  }
  double want = 0.7;
  for (std::size_t t = 0; t < t_max; ++t)
    for (std::size_t i = 0; i < n; ++i) want += flat[t * n + i] * w[i];
  EXPECT_NEAR(got, want, 1e-12);
}

// --- full model -------------------------------------------------------------------

TEST(Forward, VariantWidths) {
  ModelConfig c = small_config(Variant::kAlpha);
  EXPECT_EQ(c.mlp_input_width(), 2 * c.k);
  c.variant = Variant::kBeta;
  EXPECT_EQ(c.mlp_input_width(), 2 * c.k + c.h);
  c.variant = Variant::kFull;
  EXPECT_EQ(c.mlp_input_width(), 3 * c.k + c.h);
  std::mt19937_64 rng(20);
  const EventSequence seq = random_sequence(3, c.t_max, c.n_features, rng);
  for (Variant v : {Variant::kAlpha, Variant::kBeta, Variant::kFull}) {
    c.variant = v;
    const ForwardCache cache = predict(Parameters::uniform(c, 3), c, seq);
    EXPECT_EQ(cache.s.size(), c.mlp_input_width());
    EXPECT_EQ(cache.s_alpha.size(), c.has_alpha() ? c.k : 0u);
    EXPECT_EQ(cache.s_beta.size(), c.has_beta() ? c.k + c.h : 0u);
    EXPECT_GT(cache.probability, 0.0);
    EXPECT_LT(cache.probability, 1.0);
  }
}

TEST(Forward, ZeroHistoryLayout) {
  const ModelConfig c = small_config(Variant::kFull);
  std::mt19937_64 rng(21);
  const EventSequence seq = random_sequence(0, c.t_max, c.n_features, rng);
  const ForwardCache cache = predict(Parameters::uniform(c, 4), c, seq);
  ASSERT_EQ(cache.s.size(), 3 * c.k + c.h);
  for (std::size_t i = 0; i < 2 * c.k + c.h; ++i) EXPECT_EQ(cache.s[i], 0.0) << i;
  for (std::size_t d = 0; d < c.k; ++d) EXPECT_EQ(cache.s[2 * c.k + c.h + d], cache.event_vectors.at(0, d));
  EXPECT_EQ(cache.attention_weights.size(), 0u);
  for (double w : cache.slot_weights(c.t_max)) EXPECT_EQ(w, 0.0);
}

TEST(Forward, ProbabilityStaysInsideUnitInterval) {
  ModelConfig c = small_config(Variant::kFull);
  std::mt19937_64 rng(22);
  const EventSequence seq = random_sequence(2, c.t_max, c.n_features, rng);
  Parameters p = Parameters::uniform(c, 5);
  for (double bias : {-1e4, 1e4}) {
    p[p.layout().wide_b] = Tensor::scalar(bias);
    const ForwardCache cache = predict(p, c, seq);
    EXPECT_GT(cache.probability, 0.0);
    EXPECT_LT(cache.probability, 1.0);
  }
}

TEST(Forward, Deterministic) {
  const ModelConfig c = small_config(Variant::kFull);
  std::mt19937_64 rng(23);
  const EventSequence seq = random_sequence(4, c.t_max, c.n_features, rng);
  const Parameters p = Parameters::initialize(c, 9);
  EXPECT_EQ(p, Parameters::initialize(c, 9));
  const ForwardCache a = predict(p, c, seq), b = predict(p, c, seq);
  EXPECT_EQ(a.probability, b.probability);
  EXPECT_EQ(a.logit, b.logit);
  EXPECT_EQ(a.s, b.s);
}

TEST(Forward, HistoryPermutationKeepsOrderFreeParts) {
  const ModelConfig c = small_config(Variant::kFull, 12, 6);
  std::mt19937_64 rng(24);
  const EventSequence seq = random_sequence(4, c.t_max, c.n_features, rng);
  EventSequence shuffled = seq;
  // Slots 1..4 are history; reverse them.
  std::reverse(shuffled.events.begin() + 1, shuffled.events.begin() + 5);
  const Parameters p = Parameters::uniform(c, 6);
  const ForwardCache a = predict(p, c, seq), b = predict(p, c, shuffled);
  for (std::size_t d = 0; d < c.k; ++d) {
    EXPECT_NEAR(a.s_alpha[d], b.s_alpha[d], 1e-12);
    EXPECT_NEAR(a.s_self[d], b.s_self[d], 1e-12);
  }
  std::vector<double> wa(a.attention_weights.data().begin(), a.attention_weights.data().end());
  std::vector<double> wb(b.attention_weights.data().begin(), b.attention_weights.data().end());
  std::reverse(wb.begin(), wb.end());
  for (std::size_t i = 0; i < wa.size(); ++i) EXPECT_NEAR(wa[i], wb[i], 1e-12);
}

TEST(Forward, PaddingReceivesNoAttention) {
  const ModelConfig c = small_config(Variant::kBeta, 12, 8);
  std::mt19937_64 rng(25);
  const EventSequence seq = random_sequence(3, c.t_max, c.n_features, rng);
  const ForwardCache cache = predict(Parameters::uniform(c, 7), c, seq);
  const auto slots = cache.slot_weights(c.t_max);
  double total = 0.0;
  for (std::size_t t = 0; t < c.t_max; ++t) {
    if (!seq.mask[t] || t + 1 == c.t_max) EXPECT_EQ(slots[t], 0.0) << t;
    total += slots[t];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Forward, RejectsMismatchedInput) {
  const ModelConfig c = small_config(Variant::kFull);
  std::mt19937_64 rng(26);
  const Parameters p = Parameters::uniform(c, 8);
  EXPECT_THROW(predict(p, c, random_sequence(1, c.t_max + 1, c.n_features, rng)), DimensionError);
  EXPECT_THROW(predict(p, c, random_sequence(1, c.t_max, c.n_features + 30, rng)), DimensionError);
  ModelConfig bad = c;
  bad.mlp = {4, 2};
  EXPECT_THROW(bad.validate(), UsageError);
}

TEST(Forward, FullModelGradientsMatchFiniteDifferences) {
  for (Variant v : {Variant::kAlpha, Variant::kBeta, Variant::kFull}) {
    const ModelConfig c = small_config(v, 8, 4);
    std::mt19937_64 rng(27);
    const std::vector<EventSequence> batch = {random_sequence(1, c.t_max, c.n_features, rng),
                                              random_sequence(0, c.t_max, c.n_features, rng),
                                              random_sequence(3, c.t_max, c.n_features, rng)};
    const Parameters p = Parameters::uniform(c, 10);
    LossBuilder loss = [&](Tape& tape, std::span<const Var> leaves) {
      ModelVars vars{{leaves.begin(), leaves.end()}};
      Var total = tape.constant(Tensor::scalar(0.0));
      for (const auto& s : batch) {
        total = ad::add(total, ad::bce_with_logits(forward(tape, vars, p, c, s).logit, s.label));
      }
      return total;
    };
    std::vector<Tensor> tensors(p.tensors().begin(), p.tensors().end());
    const FiniteDiffReport r = finite_diff_check(loss, tensors);
    EXPECT_LT(r.max_rel_error, 1e-4) << to_string(v) << " worst " << p.name(r.worst_param);
  }
}
