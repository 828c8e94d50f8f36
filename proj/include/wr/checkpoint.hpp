#pragma once

// Versioned binary container for parameters, optimizer state and training metadata.
//
//   "WRCKPT1" u32 version
//   u32 n_meta    { str key, str value }*
//   u32 n_tensors { str name, u8 dtype (0=f32, 1=f64), u32 rank, u64 dims[rank], raw LE values }*
//
// str = u32 byte length + bytes.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "wr/audio_io.hpp"
#include "wr/error.hpp"
#include "wr/optim.hpp"
#include "wr/tensor.hpp"

namespace wr {

inline constexpr char kCheckpointMagic[7] = {'W', 'R', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

struct TensorRecord {
  std::string name;
  DType dtype = DType::f32;
  ag::Shape shape;
  std::vector<unsigned char> bytes;

  template <class T>
  std::vector<T> as() const {
    if (dtype != dtype_of<T>()) throw FormatError("checkpoint tensor " + name + " has unexpected dtype");
    std::vector<T> out(bytes.size() / sizeof(T));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
  }
};

class Checkpoint {
 public:
  std::map<std::string, std::string> meta;

  template <class T>
  void put(const std::string& name, const ag::Shape& shape, std::span<const T> values) {
    TensorRecord r{name, dtype_of<T>(), shape, {}};
    r.bytes.resize(values.size() * sizeof(T));
    std::memcpy(r.bytes.data(), values.data(), r.bytes.size());
    index_[name] = records_.size();
    records_.push_back(std::move(r));
  }

  template <class T>
  void put_params(const std::string& prefix, const ag::ParamSet<T>& params) {
    for (const auto& [n, t] : params) put<T>(prefix + n, t.shape(), t.values());
  }

  template <class T>
  void put_rmsprop(const std::string& prefix, const ag::RmspropState<T>& st) {
    for (const auto& [n, v] : st.mean_square) put<T>(prefix + n, {v.size()}, std::span<const T>(v));
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const TensorRecord& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("checkpoint has no tensor " + name);
    return records_[it->second];
  }

  /// Overwrite values of existing parameters; shapes must match.
  template <class T>
  void load_params(const std::string& prefix, ag::ParamSet<T>& params) const {
    for (auto& [n, t] : params) {
      const auto& r = get(prefix + n);
      if (r.shape != t.shape())
        throw FormatError("checkpoint shape mismatch for " + n + ": " + ag::shape_str(r.shape) + " vs " + ag::shape_str(t.shape()));
      const auto v = r.template as<T>();
      std::copy(v.begin(), v.end(), t.mutable_values().begin());
    }
  }

  template <class T>
  void load_rmsprop(const std::string& prefix, ag::RmspropState<T>& st) const {
    st.mean_square.clear();
    for (const auto& r : records_)
      if (r.name.rfind(prefix, 0) == 0) st.mean_square[r.name.substr(prefix.size())] = r.template as<T>();
  }

  const std::vector<TensorRecord>& records() const { return records_; }

  std::vector<unsigned char> encode() const {
    std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 7);
    detail::store_u32(out, kCheckpointVersion);
    auto put_str = [&](const std::string& s) {
      detail::store_u32(out, static_cast<std::uint32_t>(s.size()));
      out.insert(out.end(), s.begin(), s.end());
    };
    detail::store_u32(out, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      put_str(k);
      put_str(v);
    }
    detail::store_u32(out, static_cast<std::uint32_t>(records_.size()));
    for (const auto& r : records_) {
      put_str(r.name);
      out.push_back(static_cast<unsigned char>(r.dtype));
      detail::store_u32(out, static_cast<std::uint32_t>(r.shape.size()));
      for (auto d : r.shape) {
        detail::store_u32(out, static_cast<std::uint32_t>(d & 0xffffffffu));
        detail::store_u32(out, static_cast<std::uint32_t>(static_cast<std::uint64_t>(d) >> 32));
      }
      out.insert(out.end(), r.bytes.begin(), r.bytes.end());
    }
    return out;
  }

  static Checkpoint decode(std::span<const unsigned char> b) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (b.size() - pos < n) throw FormatError("truncated checkpoint");
    };
    auto u32 = [&] {
      need(4);
      const auto v = detail::load_u32(b.data() + pos);
      pos += 4;
      return v;
    };
    auto str = [&] {
      const auto n = u32();
      need(n);
      std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
      pos += n;
      return s;
    };
    need(7);
    if (std::memcmp(b.data(), kCheckpointMagic, 7) != 0) throw FormatError("not a WRCKPT1 checkpoint");
    pos = 7;
    if (const auto v = u32(); v != kCheckpointVersion) throw UnsupportedError("checkpoint version " + std::to_string(v));
    Checkpoint c;
    for (auto n = u32(); n > 0; --n) {
      auto k = str();
      c.meta[k] = str();
    }
    for (auto n = u32(); n > 0; --n) {
      TensorRecord r;
      r.name = str();
      need(1);
      const auto dt = b[pos++];
      if (dt > 1) throw FormatError("unknown dtype in checkpoint");
      r.dtype = static_cast<DType>(dt);
      for (auto rank = u32(); rank > 0; --rank) {
        const std::uint64_t lo = u32(), hi = u32();
        r.shape.push_back(static_cast<std::size_t>(lo | (hi << 32)));
      }
      const std::size_t bytes = ag::numel(r.shape) * (r.dtype == DType::f32 ? 4 : 8);
      need(bytes);
      r.bytes.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + bytes));
      pos += bytes;
      c.index_[r.name] = c.records_.size();
      c.records_.push_back(std::move(r));
    }
    if (pos != b.size()) throw FormatError("trailing bytes in checkpoint");
    return c;
  }

  void save(const std::filesystem::path& path) const { detail::write_file_atomic(path, encode()); }
  static Checkpoint load(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    try {
      return decode(bytes);
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }

 private:
  std::vector<TensorRecord> records_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace wr
