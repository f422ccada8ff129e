#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nvs/autodiff/optim.hpp"
#include "nvs/binary_io.hpp"
#include "nvs/error.hpp"
#include "nvs/model.hpp"

namespace nvs {

// .nvsm layout (all integers little-endian):
//   "NVSM" u16 version
//   digest: u32 resolution, u32 image_size, u32 views,
//           u32 n + u32[n] trunk channels, u32 head_hidden,
//           u32 n + u32[n] decoder channels, u32 score_channels, u32 refiner_channels
//   u32 tensor count, then records {u32 name_len, name, u32 rank, u32 dims[rank], f32 payload}
//   u8 optimizer flag; when 1: u8 kind, f64 lr, f64 beta1, f64 beta2, f64 eps,
//           u64 steps, u32 epochs_done, u32 record count, records as above
//           ("m.<param>" and "v.<param>" for Adam moments)
inline constexpr std::string_view kCheckpointMagic = "NVSM";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct OptimizerSnapshot {
  ad::OptimizerOptions options;
  std::uint64_t steps = 0;
  std::uint32_t epochs_done = 0;
  std::vector<std::vector<float>> first;   // empty for SGD
  std::vector<std::vector<float>> second;

  friend bool operator==(const OptimizerSnapshot& a, const OptimizerSnapshot& b) {
    return a.options.kind == b.options.kind && a.options.learning_rate == b.options.learning_rate &&
           a.options.beta1 == b.options.beta1 && a.options.beta2 == b.options.beta2 &&
           a.options.epsilon == b.options.epsilon && a.steps == b.steps &&
           a.epochs_done == b.epochs_done && a.first == b.first && a.second == b.second;
  }
};

inline OptimizerSnapshot snapshot(const ad::Optimizer<float>& opt, std::uint32_t epochs_done) {
  return {opt.options(), opt.steps(), epochs_done, opt.first_moments(), opt.second_moments()};
}

namespace detail {

inline void write_digest(io::ByteWriter& w, const ModelConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.resolution));
  w.u32(static_cast<std::uint32_t>(c.image_size));
  w.u32(static_cast<std::uint32_t>(c.views));
  w.u32(static_cast<std::uint32_t>(c.trunk_channels.size()));
  for (int v : c.trunk_channels) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(c.head_hidden));
  w.u32(static_cast<std::uint32_t>(c.decoder_channels.size()));
  for (int v : c.decoder_channels) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(c.score_channels));
  w.u32(static_cast<std::uint32_t>(c.refiner_channels));
}

inline std::string digest_bytes(const ModelConfig& c) {
  io::ByteWriter w;
  write_digest(w, c);
  return w.take();
}

inline void write_record(io::ByteWriter& w, std::string_view name, const ad::Shape& shape,
                         std::span<const float> values) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (float v : values) w.f32(v);
}

struct Record {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
};

inline Record read_record(io::ByteReader& r) {
  Record rec;
  const auto len = r.u32();
  rec.name = std::string(r.bytes(len));
  const auto rank = r.u32();
  if (rank > 8) throw ParseError("checkpoint: tensor '" + rec.name + "' has implausible rank");
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = r.u32();
    if (d != 0 && n > r.remaining() / d) {
      throw ParseError("checkpoint: tensor '" + rec.name + "' larger than the file");
    }
    rec.shape.push_back(d);
    n *= d;
  }
  r.need(n * 4);
  rec.values.resize(n);
  for (auto& v : rec.values) v = r.f32();
  return rec;
}

inline std::vector<Record> read_records(io::ByteReader& r) {
  const auto count = r.u32();
  std::vector<Record> out;
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(read_record(r));
  return out;
}

}  // namespace detail

inline std::string encode_checkpoint(const Model<float>& model,
                                     const OptimizerSnapshot* optimizer = nullptr) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  detail::write_digest(w, model.config());
  const auto& params = model.named_parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) detail::write_record(w, name, t.shape(), t.data());
  if (optimizer == nullptr) {
    w.u8(0);
    return w.take();
  }
  w.u8(1);
  const auto& o = optimizer->options;
  w.u8(o.kind == ad::OptimizerKind::kSgd ? 0 : 1);
  w.f64(o.learning_rate);
  w.f64(o.beta1);
  w.f64(o.beta2);
  w.f64(o.epsilon);
  w.u64(optimizer->steps);
  w.u32(optimizer->epochs_done);
  w.u32(static_cast<std::uint32_t>(optimizer->first.size() + optimizer->second.size()));
  for (std::size_t k = 0; k < optimizer->first.size(); ++k) {
    detail::write_record(w, "m." + params[k].first, params[k].second.shape(), optimizer->first[k]);
  }
  for (std::size_t k = 0; k < optimizer->second.size(); ++k) {
    detail::write_record(w, "v." + params[k].first, params[k].second.shape(), optimizer->second[k]);
  }
  return w.take();
}

// Loads parameters into `model`. Everything is validated before any tensor is
// written, so a failed load leaves the model untouched.
inline std::optional<OptimizerSnapshot> decode_checkpoint(std::string_view bytes, Model<float>& model) {
  io::ByteReader r(bytes, "checkpoint");
  if (bytes.size() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw ParseError("checkpoint: bad magic");
  }
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::string expected = detail::digest_bytes(model.config());
  // The digest has variable length; read it field by field.
  io::ByteWriter seen;
  auto copy32 = [&] {
    const auto v = r.u32();
    seen.u32(v);
    return v;
  };
  copy32();
  copy32();
  copy32();
  const auto n_trunk = copy32();
  if (n_trunk > 64) throw ParseError("checkpoint: implausible trunk depth");
  for (std::uint32_t i = 0; i < n_trunk; ++i) copy32();
  copy32();
  const auto n_dec = copy32();
  if (n_dec > 64) throw ParseError("checkpoint: implausible decoder depth");
  for (std::uint32_t i = 0; i < n_dec; ++i) copy32();
  copy32();
  copy32();

  auto records = detail::read_records(r);
  std::optional<OptimizerSnapshot> opt;
  const auto flag = r.u8();
  std::vector<detail::Record> opt_records;
  if (flag == 1) {
    OptimizerSnapshot s;
    const auto kind = r.u8();
    if (kind > 1) throw ParseError("checkpoint: unknown optimizer kind");
    s.options.kind = kind == 0 ? ad::OptimizerKind::kSgd : ad::OptimizerKind::kAdam;
    s.options.learning_rate = r.f64();
    s.options.beta1 = r.f64();
    s.options.beta2 = r.f64();
    s.options.epsilon = r.f64();
    s.steps = r.u64();
    s.epochs_done = r.u32();
    opt_records = detail::read_records(r);
    opt = std::move(s);
  } else if (flag != 0) {
    throw ParseError("checkpoint: bad optimizer flag");
  }
  if (!r.at_end()) throw ParseError("checkpoint: trailing bytes");

  if (seen.data() != expected) {
    throw DimensionError("checkpoint: model configuration digest does not match");
  }
  const auto& params = model.named_parameters();
  if (records.size() != params.size()) {
    throw DimensionError("checkpoint: has " + std::to_string(records.size()) +
                         " tensors, model has " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (records[k].name != params[k].first || records[k].shape != params[k].second.shape()) {
      throw DimensionError("checkpoint: tensor '" + records[k].name + "' " +
                           ad::to_string(records[k].shape) + " does not match '" +
                           params[k].first + "' " + ad::to_string(params[k].second.shape()));
    }
  }
  if (opt) {
    const bool adam = opt->options.kind == ad::OptimizerKind::kAdam;
    const std::size_t want = adam ? 2 * params.size() : 0;
    if (opt_records.size() != want) throw DimensionError("checkpoint: optimizer state size mismatch");
    for (std::size_t i = 0; i < opt_records.size(); ++i) {
      const std::size_t k = i % params.size();
      const std::string name = (i < params.size() ? "m." : "v.") + params[k].first;
      if (opt_records[i].name != name || opt_records[i].shape != params[k].second.shape()) {
        throw DimensionError("checkpoint: optimizer record '" + opt_records[i].name + "' mismatch");
      }
      (i < params.size() ? opt->first : opt->second).push_back(std::move(opt_records[i].values));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].second;
    std::copy(records[k].values.begin(), records[k].values.end(), dst.data().begin());
  }
  return opt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                            const OptimizerSnapshot* optimizer = nullptr) {
  io::write_file(path, encode_checkpoint(model, optimizer));
}

inline std::optional<OptimizerSnapshot> load_checkpoint(const std::filesystem::path& path,
                                                        Model<float>& model) {
  if (!std::filesystem::exists(path)) throw NotFound("checkpoint not found: " + path.string());
  return decode_checkpoint(io::read_file(path), model);
}

}  // namespace nvs
