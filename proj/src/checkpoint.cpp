#include <cmath>

#include "binary_io.hpp"
#include "nhfm/error.hpp"
#include "nhfm/training.hpp"

namespace nhfm {
namespace {

constexpr std::string_view kMagic = "NHFMCK1";

void write_tensor(io::ByteWriter& w, const Tensor& t) {
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f64(v);
}

Tensor read_tensor(io::ByteReader& r) {
  const std::size_t rank = r.u8();
  if (rank > 2) throw FormatError(r.name() + ": tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = r.u64();
    if (d > (std::size_t{1} << 40)) throw FormatError(r.name() + ": implausible tensor dimension");
    count *= d;
  }
  std::vector<double> values(count);
  for (auto& v : values) v = r.f64();
  return Tensor(std::move(shape), std::move(values));
}

void write_optional(io::ByteWriter& w, const std::optional<double>& v) {
  w.u8(v.has_value());
  w.f64(v.value_or(0.0));
}

std::optional<double> read_optional(io::ByteReader& r) {
  const bool present = r.u8() != 0;
  const double v = r.f64();
  return present ? std::optional<double>(v) : std::nullopt;
}

void write_model_config(io::ByteWriter& w, const ModelConfig& c) {
  w.u8(static_cast<std::uint8_t>(c.variant));
  w.u64(c.n_features);
  w.u64(c.k);
  w.u64(c.h);
  w.u64(c.t_max);
  w.u32(static_cast<std::uint32_t>(c.mlp.size()));
  for (std::size_t width : c.mlp) w.u64(width);
}

ModelConfig read_model_config(io::ByteReader& r) {
  ModelConfig c;
  const std::uint8_t variant = r.u8();
  if (variant > 2) throw FormatError(r.name() + ": unknown variant code " + std::to_string(variant));
  c.variant = static_cast<Variant>(variant);
  c.n_features = r.u64();
  c.k = r.u64();
  c.h = r.u64();
  c.t_max = r.u64();
  const std::uint32_t layers = r.u32();
  if (layers > 64) throw FormatError(r.name() + ": implausible MLP depth");
  c.mlp.resize(layers);
  for (auto& width : c.mlp) width = r.u64();
  try {
    c.validate();
  } catch (const Error& e) {
    throw FormatError(r.name() + ": invalid model config: " + e.what());
  }
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.text(kMagic);
  w.u16(kCheckpointVersion);
  write_model_config(w, ck.model);
  w.bytes(ck.schema_hash.data(), ck.schema_hash.size());

  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (ParamId id = 0; id < ck.params.size(); ++id) {
    w.str(ck.params.name(id));
    write_tensor(w, ck.params[id]);
  }

  w.u8(static_cast<std::uint8_t>(ck.optimizer));
  w.u64(ck.optimizer_state.step);
  w.u32(static_cast<std::uint32_t>(ck.optimizer_state.first_moment.size()));
  for (const auto& t : ck.optimizer_state.first_moment) write_tensor(w, t);
  for (const auto& t : ck.optimizer_state.second_moment) write_tensor(w, t);

  const auto& meta = ck.metadata;
  w.u64(meta.epoch);
  w.u64(meta.seed);
  write_optional(w, meta.best_valid_auc);
  w.u32(static_cast<std::uint32_t>(meta.history.size()));
  for (const auto& rec : meta.history) {
    w.u64(rec.epoch);
    w.f64(rec.train_nll);
    write_optional(w, rec.valid_auc);
  }
  return w.buffer();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  io::ByteWriter w;
  const auto bytes = serialize_checkpoint(checkpoint);
  w.bytes(bytes.data(), bytes.size());
  w.write_file(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  if (r.size() < kMagic.size() || r.text(kMagic.size()) != kMagic) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(version) + " (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ck;
  ck.model = read_model_config(r);
  r.bytes(ck.schema_hash.data(), ck.schema_hash.size());

  ck.params = Parameters::zeros(ck.model);
  const std::uint32_t count = r.u32();
  if (count != ck.params.size()) {
    throw FormatError(path.string() + ": checkpoint has " + std::to_string(count) +
                      " parameters, model config implies " + std::to_string(ck.params.size()));
  }
  for (ParamId id = 0; id < count; ++id) {
    const std::string name = r.str();
    if (name != ck.params.name(id)) {
      throw FormatError(path.string() + ": expected parameter '" + ck.params.name(id) +
                        "', found '" + name + "'");
    }
    Tensor t = read_tensor(r);
    if (t.shape() != ck.params[id].shape()) {
      throw FormatError(path.string() + ": parameter '" + name + "' has shape " +
                        shape_string(t.shape()) + ", expected " +
                        shape_string(ck.params[id].shape()));
    }
    ck.params[id] = std::move(t);
  }

  const std::uint8_t opt = r.u8();
  if (opt > 1) throw FormatError(path.string() + ": unknown optimizer code " + std::to_string(opt));
  ck.optimizer = static_cast<OptimizerKind>(opt);
  ck.optimizer_state.step = r.u64();
  const std::uint32_t moments = r.u32();
  if (moments != 0 && moments != count) {
    throw FormatError(path.string() + ": optimizer state covers " + std::to_string(moments) +
                      " of " + std::to_string(count) + " parameters");
  }
  for (std::uint32_t i = 0; i < moments; ++i) ck.optimizer_state.first_moment.push_back(read_tensor(r));
  for (std::uint32_t i = 0; i < moments; ++i) ck.optimizer_state.second_moment.push_back(read_tensor(r));

  auto& meta = ck.metadata;
  meta.epoch = r.u64();
  meta.seed = r.u64();
  meta.best_valid_auc = read_optional(r);
  const std::uint32_t epochs = r.u32();
  for (std::uint32_t i = 0; i < epochs; ++i) {
    EpochRecord rec;
    rec.epoch = r.u64();
    rec.train_nll = r.f64();
    rec.valid_auc = read_optional(r);
    meta.history.push_back(rec);
  }
  if (!r.at_end()) {
    throw FormatError(path.string() + ": " + std::to_string(r.size() - r.position()) +
                      " trailing bytes after checkpoint");
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const FeatureSchema& schema) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.schema_hash != schema.hash()) {
    throw DataError(path.string() + ": schema hash mismatch (checkpoint " +
                    hash_hex(ck.schema_hash) + ", data " + hash_hex(schema.hash()) + ")");
  }
  if (ck.model.n_features != schema.n()) {
    throw DataError(path.string() + ": checkpoint expects " + std::to_string(ck.model.n_features) +
                    " features, schema has " + std::to_string(schema.n()));
  }
  return ck;
}

}  // namespace nhfm
