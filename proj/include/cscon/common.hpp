#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cscon {

// ---------------------------------------------------------------------------
// Error types. The CLI maps these onto exit codes, so keep the hierarchy flat
// and the messages single-line.
// ---------------------------------------------------------------------------

class InvalidArgument : public std::invalid_argument {
public:
  explicit InvalidArgument(const std::string& msg) : std::invalid_argument(msg) {}
};

class ConfigError : public std::runtime_error {
public:
  ConfigError(std::string field, const std::string& msg)
      : std::runtime_error(field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

private:
  std::string field_;
};

class IoError : public std::runtime_error {
public:
  IoError(std::string path, const std::string& msg)
      : std::runtime_error(msg + " (" + path + ")"), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

private:
  std::string path_;
};

// Malformed on-disk data; carries the offending path and byte offset.
class FormatError : public std::runtime_error {
public:
  FormatError(std::string path, std::uint64_t offset, const std::string& msg)
      : std::runtime_error(msg + " (" + path + ", byte " + std::to_string(offset) + ")"),
        path_(std::move(path)),
        offset_(offset) {}
  const std::string& path() const { return path_; }
  std::uint64_t offset() const { return offset_; }

private:
  std::string path_;
  std::uint64_t offset_;
};

class TrainingError : public std::runtime_error {
public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Seeded randomness. One engine type everywhere so that a (seed, stream)
// pair pins every random draw in the system.
// ---------------------------------------------------------------------------

inline std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ b); }
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix64(mix64(a, b) ^ c);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::int64_t uniform_int(std::int64_t n) {
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % un;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::int64_t>(x % un);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  // N(0, sigma^2) resampled until |x| <= 2*sigma
  double trunc_normal(double sigma) {
    double x;
    do {
      x = normal() * sigma;
    } while (std::abs(x) > 2.0 * sigma);
    return x;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_int(i + 1)]);
    }
  }

  // m distinct values from [0, n), in selection order
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t m) {
    if (m > n) throw InvalidArgument("sample_without_replacement: m > n");
    std::vector<std::int64_t> pool(n);
    for (std::int64_t i = 0; i < n; ++i) pool[i] = i;
    for (std::int64_t i = 0; i < m; ++i) {
      std::swap(pool[i], pool[i + uniform_int(n - i)]);
    }
    pool.resize(m);
    return pool;
  }

  // Uniform rotation over SO(3) via a random unit quaternion.
  std::array<std::array<double, 3>, 3> rotation_matrix() {
    double q[4];
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& qi : q) {
        qi = normal();
        norm2 += qi * qi;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cscon
