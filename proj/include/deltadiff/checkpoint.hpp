#pragma once

// Checkpoint container, all integers and floats little-endian:
//
//   "DDIF"            4-byte magic
//   u32 version       kCheckpointVersion
//   u64 payload_size  bytes that follow, excluding the trailing checksum
//   payload
//   u64 fnv1a64       checksum of payload
//
// payload:
//   u32 n_fields, then n_fields x (u32 len, key bytes, f64 value)
//   i64 step
//   u32 has_moments
//   u32 n_tensors, then per tensor:
//       u32 len, name bytes, u32 ndim, ndim x i32 dims, u64 count,
//       count x f32 weights [, count x f32 adam_m, count x f32 adam_v]
//   u64 n_loss, then n_loss x (i64 step, f64 loss)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deltadiff/denoiser.hpp"
#include "deltadiff/errors.hpp"
#include "deltadiff/schedule.hpp"
#include "deltadiff/trainer.hpp"

namespace deltadiff {

inline constexpr char kCheckpointMagic[4] = {'D', 'D', 'I', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training or run inference.
struct Checkpoint {
  DenoiserConfig denoiser;
  ScheduleConfig schedule;
  int scale = 4;
  TrainState state;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const noexcept { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw IntegrityError("checkpoint: payload ends early");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::vector<std::pair<std::string, double>> config_fields(const Checkpoint& c) {
  return {{"base_channels", c.denoiser.base_channels},
          {"depth", c.denoiser.depth},
          {"time_embed_dim", c.denoiser.time_embed_dim},
          {"image_channels", c.denoiser.image_channels},
          {"steps", c.schedule.steps},
          {"eta_start", c.schedule.eta_start},
          {"eta_end", c.schedule.eta_end},
          {"curvature_p", c.schedule.curvature_p},
          {"scale", c.scale}};
}

}  // namespace detail

/// Writes atomically: the file appears under `path` only once complete.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const TrainState& st = ckpt.state;
  const bool has_moments = st.adam_m.size() == st.params.tensors.size();
  detail::ByteWriter w;
  const auto fields = detail::config_fields(ckpt);
  w.u32(static_cast<std::uint32_t>(fields.size()));
  for (const auto& [k, v] : fields) {
    w.str(k);
    w.f64(v);
  }
  w.i64(st.step);
  w.u32(has_moments ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(st.params.tensors.size()));
  for (std::size_t i = 0; i < st.params.tensors.size(); ++i) {
    const auto& t = st.params.tensors[i];
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.i32(d);
    w.u64(t.values.size());
    for (float v : t.values) w.f32(v);
    if (has_moments) {
      for (float v : st.adam_m[i]) w.f32(v);
      for (float v : st.adam_v[i]) w.f32(v);
    }
  }
  w.u64(st.loss_history.size());
  for (const auto& [step, l] : st.loss_history) {
    w.i64(step);
    w.f64(l);
  }

  detail::ByteWriter header;
  const auto& payload = w.bytes();
  header.u32(0);  // placeholder for magic, overwritten below
  header.u32(kCheckpointVersion);
  header.u64(payload.size());
  std::vector<std::uint8_t> file = header.bytes();
  std::memcpy(file.data(), kCheckpointMagic, 4);
  file.insert(file.end(), payload.begin(), payload.end());
  detail::ByteWriter tail;
  tail.u64(detail::fnv1a64(payload.data(), payload.size()));
  file.insert(file.end(), tail.bytes().begin(), tail.bytes().end());

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
    if (!out) throw IoError("save_checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("save_checkpoint: cannot move into place " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
  const std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < 16 || std::memcmp(file.data(), kCheckpointMagic, 4) != 0) {
    throw IntegrityError("load_checkpoint: " + path.string() + " has no DDIF header");
  }
  detail::ByteReader head(file.data() + 4, 12);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("load_checkpoint: format version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  const std::uint64_t payload_size = head.u64();
  if (file.size() != 16 + payload_size + 8) {
    throw IntegrityError("load_checkpoint: " + path.string() + " is " + std::to_string(file.size()) +
                         " bytes, header declares " + std::to_string(16 + payload_size + 8));
  }
  const std::uint8_t* payload = file.data() + 16;
  detail::ByteReader tail(payload + payload_size, 8);
  if (tail.u64() != detail::fnv1a64(payload, payload_size)) {
    throw IntegrityError("load_checkpoint: checksum mismatch in " + path.string());
  }

  detail::ByteReader r(payload, payload_size);
  std::map<std::string, double> fields;
  const std::uint32_t n_fields = r.u32();
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    std::string key = r.str();
    fields[key] = r.f64();
  }
  auto field = [&](const char* key) {
    auto it = fields.find(key);
    if (it == fields.end()) throw IntegrityError(std::string("load_checkpoint: missing field ") + key);
    return it->second;
  };
  Checkpoint c;
  c.denoiser.base_channels = static_cast<int>(field("base_channels"));
  c.denoiser.depth = static_cast<int>(field("depth"));
  c.denoiser.time_embed_dim = static_cast<int>(field("time_embed_dim"));
  c.denoiser.image_channels = static_cast<int>(field("image_channels"));
  c.schedule.steps = static_cast<int>(field("steps"));
  c.schedule.eta_start = field("eta_start");
  c.schedule.eta_end = field("eta_end");
  c.schedule.curvature_p = field("curvature_p");
  c.scale = static_cast<int>(field("scale"));

  TrainState& st = c.state;
  st.params.config = c.denoiser;
  st.step = r.i64();
  const bool has_moments = r.u32() != 0;
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    ParamTensor<float> t;
    t.name = r.str();
    const std::uint32_t ndim = r.u32();
    std::size_t expect = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(r.i32());
      expect *= static_cast<std::size_t>(t.shape.back());
    }
    const std::uint64_t count = r.u64();
    if (count != expect) throw IntegrityError("load_checkpoint: tensor '" + t.name + "' count/shape mismatch");
    t.values.resize(count);
    for (auto& v : t.values) v = r.f32();
    if (has_moments) {
      nn::Buffer<float> m(count);
      nn::Buffer<float> v(count);
      for (auto& x : m) x = r.f32();
      for (auto& x : v) x = r.f32();
      st.adam_m.push_back(std::move(m));
      st.adam_v.push_back(std::move(v));
    }
    st.params.tensors.push_back(std::move(t));
  }
  if (!has_moments) {
    st.adam_m = zero_grads(st.params);
    st.adam_v = zero_grads(st.params);
  }
  const std::uint64_t n_loss = r.u64();
  for (std::uint64_t i = 0; i < n_loss; ++i) {
    const std::int64_t step = r.i64();
    st.loss_history.emplace_back(step, r.f64());
  }
  if (!r.done()) throw IntegrityError("load_checkpoint: trailing bytes in payload");

  // the layout must agree with the stored configuration
  try {
    DenoiserNet<float> probe(st.params);
  } catch (const std::exception& e) {
    throw IntegrityError(std::string("load_checkpoint: ") + e.what());
  }
  return c;
}

/// Loads and checks that the stored network configuration equals `expected`.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const DenoiserConfig& expected) {
  Checkpoint c = load_checkpoint(path);
  auto check = [](const char* name, int got, int want) {
    if (got != want) {
      throw ConfigMismatchError(name, std::string("load_checkpoint: config mismatch in ") + name + ": checkpoint has " +
                                          std::to_string(got) + ", expected " + std::to_string(want));
    }
  };
  check("base_channels", c.denoiser.base_channels, expected.base_channels);
  check("depth", c.denoiser.depth, expected.depth);
  check("time_embed_dim", c.denoiser.time_embed_dim, expected.time_embed_dim);
  check("image_channels", c.denoiser.image_channels, expected.image_channels);
  return c;
}

}  // namespace deltadiff
