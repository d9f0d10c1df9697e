#pragma once

// Named parameter store with deterministic iteration order, plus the binary
// checkpoint archive. Archive layout (little-endian):
//   magic "CSAR", u32 version, u64 entry count, then per entry:
//   u32 name length, name bytes, u32 ndim, u32 dims..., float32 payload.
// Float payloads round-trip bit-exactly for the float instantiation.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cscon/common.hpp"
#include "cscon/tensor.hpp"

namespace cscon {

template <class Real>
class ParamStoreT {
public:
  using Tensor = TensorT<Real>;

  Tensor create(const std::string& name, Shape shape) {
    if (index_.count(name)) throw InvalidArgument("ParamStore: duplicate name " + name);
    auto t = Tensor::zeros(shape, /*requires_grad=*/true);
    index_[name] = entries_.size();
    entries_.push_back({name, t});
    return t;
  }

  Tensor create(const std::string& name, Shape shape, Rng& rng, double trunc_sigma) {
    auto t = create(name, shape);
    for (auto& v : t.values()) v = static_cast<Real>(rng.trunc_normal(trunc_sigma));
    return t;
  }

  Tensor create_const(const std::string& name, Shape shape, Real fill) {
    auto t = create(name, shape);
    std::fill(t.values().begin(), t.values().end(), fill);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("ParamStore: unknown name " + name);
    return entries_[it->second].tensor;
  }

  std::size_t size() const { return entries_.size(); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  struct Entry {
    std::string name;
    Tensor tensor;
  };
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// ---------------------------------------------------------------------------
// Checkpoint archive
// ---------------------------------------------------------------------------

struct ArchiveEntry {
  std::string name;
  std::vector<std::int64_t> dims;
  std::vector<float> data;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline bool read_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline bool read_u64(std::istream& is, std::uint64_t& v) {
  std::uint32_t lo, hi;
  if (!read_u32(is, lo) || !read_u32(is, hi)) return false;
  v = static_cast<std::uint64_t>(lo) | (static_cast<std::uint64_t>(hi) << 32);
  return true;
}

}  // namespace detail

inline constexpr char kArchiveMagic[4] = {'C', 'S', 'A', 'R'};
inline constexpr std::uint32_t kArchiveVersion = 1;

inline void save_archive(const std::vector<ArchiveEntry>& entries,
                         const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path.string(), "cannot open checkpoint for writing");
  os.write(kArchiveMagic, 4);
  detail::write_u32(os, kArchiveVersion);
  detail::write_u64(os, entries.size());
  for (const auto& e : entries) {
    detail::write_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(e.dims.size()));
    std::int64_t numel = 1;
    for (auto d : e.dims) {
      detail::write_u32(os, static_cast<std::uint32_t>(d));
      numel *= d;
    }
    if (numel != static_cast<std::int64_t>(e.data.size()))
      throw InvalidArgument("save_archive: entry " + e.name + " dims do not match payload");
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  }
  if (!os) throw IoError(path.string(), "checkpoint write failed");
}

inline std::vector<ArchiveEntry> load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "cannot open checkpoint");
  auto offset = [&is]() { return static_cast<std::uint64_t>(is.tellg()); };
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kArchiveMagic, 4) != 0)
    throw FormatError(path.string(), 0, "bad archive magic");
  std::uint32_t version;
  if (!detail::read_u32(is, version)) throw FormatError(path.string(), offset(), "truncated header");
  if (version != kArchiveVersion)
    throw FormatError(path.string(), 4, "unsupported archive version " + std::to_string(version));
  std::uint64_t count;
  if (!detail::read_u64(is, count)) throw FormatError(path.string(), offset(), "truncated header");
  std::vector<ArchiveEntry> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    std::uint32_t name_len;
    if (!detail::read_u32(is, name_len))
      throw FormatError(path.string(), offset(), "truncated entry header");
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw FormatError(path.string(), offset(), "truncated entry name");
    std::uint32_t ndim;
    if (!detail::read_u32(is, ndim) || ndim > 4)
      throw FormatError(path.string(), offset(), "bad entry rank");
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint32_t dim;
      if (!detail::read_u32(is, dim))
        throw FormatError(path.string(), offset(), "truncated entry dims");
      e.dims.push_back(dim);
      numel *= dim;
    }
    e.data.resize(static_cast<std::size_t>(numel));
    if (!is.read(reinterpret_cast<char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(float))))
      throw FormatError(path.string(), offset(), "truncated entry payload");
    entries.push_back(std::move(e));
  }
  return entries;
}

template <class Real>
void save_params(const ParamStoreT<Real>& store, const std::filesystem::path& path,
                 const std::map<std::string, float>& meta = {}) {
  std::vector<ArchiveEntry> entries;
  for (const auto& [key, value] : meta) {
    entries.push_back({"meta." + key, {1}, {value}});
  }
  for (const auto& e : store.entries()) {
    ArchiveEntry a;
    a.name = e.name;
    for (int i = 0; i < e.tensor.shape().ndim(); ++i) a.dims.push_back(e.tensor.shape()[i]);
    a.data.reserve(e.tensor.values().size());
    for (auto v : e.tensor.values()) a.data.push_back(static_cast<float>(v));
    entries.push_back(std::move(a));
  }
  save_archive(entries, path);
}

struct LoadedCheckpoint {
  std::map<std::string, float> meta;
  std::unordered_map<std::string, ArchiveEntry> params;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  LoadedCheckpoint ck;
  for (auto& e : load_archive(path)) {
    if (e.name.rfind("meta.", 0) == 0 && e.data.size() == 1) {
      ck.meta[e.name.substr(5)] = e.data[0];
    } else {
      ck.params.emplace(e.name, std::move(e));
    }
  }
  return ck;
}

template <class Real>
void load_params(ParamStoreT<Real>& store, const LoadedCheckpoint& ck,
                 const std::string& path_for_errors) {
  for (auto& e : store.entries()) {
    auto it = ck.params.find(e.name);
    if (it == ck.params.end())
      throw FormatError(path_for_errors, 0, "checkpoint missing parameter " + e.name);
    if (static_cast<std::int64_t>(it->second.data.size()) != e.tensor.numel())
      throw FormatError(path_for_errors, 0, "checkpoint shape mismatch for " + e.name);
    auto& dst = e.tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(it->second.data[i]);
  }
}

}  // namespace cscon
