#include "binary_io.hpp"
#include "nhfm/data.hpp"

namespace nhfm {

namespace {

constexpr std::string_view kMagic = "NHFMDS1";

}  // namespace

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  if (!dataset.schema) throw UsageError("write_dataset: dataset has no schema");
  io::ByteWriter w;
  w.text(kMagic);
  w.u8(static_cast<std::uint8_t>(dataset.split));
  const SchemaHash hash = dataset.schema->hash();
  w.bytes(hash.data(), hash.size());
  const std::size_t t_max = dataset.sequences.empty() ? 0 : dataset.sequences.front().t_max();
  w.u32(static_cast<std::uint32_t>(t_max));
  w.u64(dataset.sequences.size());
  for (const auto& seq : dataset.sequences) {
    if (seq.t_max() != t_max) throw DataError("write_dataset: sequences disagree on t_max");
    w.str(seq.user);
    w.u8(static_cast<std::uint8_t>(seq.label));
    w.varint(seq.real_count());
    for (std::size_t t = seq.first_real(); t < seq.t_max(); ++t) {
      const Event& ev = *seq.events[t];
      w.varint(ev.entries.size());
      std::uint32_t prev = 0;
      for (const auto& e : ev.entries) {
        const std::uint64_t delta = e.index - prev;
        prev = e.index;
        const bool unit = e.value == 1.0;
        w.varint((delta << 1) | (unit ? 1u : 0u));
        if (!unit) w.f64(e.value);
      }
    }
  }
  w.write_file(path);
}

Dataset read_dataset(const std::filesystem::path& path,
                     std::shared_ptr<const FeatureSchema> schema) {
  if (!schema) throw UsageError("read_dataset: schema required");
  auto r = io::ByteReader::from_file(path);
  if (r.size() < kMagic.size() || r.text(kMagic.size()) != kMagic) {
    throw FormatError(path.string() + ": not an encoded dataset (bad magic)");
  }
  Dataset ds;
  ds.schema = schema;
  const std::uint8_t tag = r.u8();
  if (tag > 2) throw FormatError(path.string() + ": unknown split tag");
  ds.split = static_cast<SplitTag>(tag);
  SchemaHash hash{};
  r.bytes(hash.data(), hash.size());
  if (hash != schema->hash()) {
    throw FormatError(path.string() + ": schema hash mismatch (file " + hash_hex(hash) +
                      ", schema " + hash_hex(schema->hash()) + ")");
  }
  const std::size_t t_max = r.u32();
  const std::uint64_t count = r.u64();
  ds.sequences.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));

  const std::size_t n = schema->n();
  for (std::uint64_t s = 0; s < count; ++s) {
    std::string user = r.str();
    const int label = r.u8();
    const std::size_t real = static_cast<std::size_t>(r.varint());
    if (real == 0 || real > t_max) throw FormatError(path.string() + ": bad real-event count");
    std::vector<EventPtr> events;
    events.reserve(real);
    for (std::size_t t = 0; t < real; ++t) {
      Event ev;
      const std::size_t m = static_cast<std::size_t>(r.varint());
      ev.entries.reserve(m);
      std::uint64_t index = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const std::uint64_t code = r.varint();
        index += code >> 1;
        if (index >= n) throw FormatError(path.string() + ": feature index out of range");
        const double value = (code & 1) ? 1.0 : r.f64();
        ev.entries.push_back({static_cast<std::uint32_t>(index), value});
      }
      events.push_back(std::make_shared<const Event>(std::move(ev)));
    }
    // Sliding windows of one user repeat events; share them with the
    // previous sequence instead of holding duplicate copies.
    if (!ds.sequences.empty() && ds.sequences.back().user == user) {
      const EventSequence& prev = ds.sequences.back();
      for (std::size_t t = 0; t + 1 < real; ++t) {
        const std::size_t slot = t_max - real + t + 1;
        if (slot < t_max && prev.events[slot] && *prev.events[slot] == *events[t]) {
          events[t] = prev.events[slot];
        }
      }
    }
    ds.sequences.push_back(make_sequence(events, label, std::move(user), t_max));
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after last sequence");
  return ds;
}

}  // namespace nhfm
