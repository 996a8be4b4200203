// awe/common.hpp

// Copyright 2026  The awe-forge authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef AWE_COMMON_HPP_
#define AWE_COMMON_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace awe {

inline constexpr const char* kVersion = "0.1.0";

// Rows are time steps (or batch items), columns are feature dimensions.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

// Error taxonomy shared by the library and the CLI. The CLI maps kinds to
// exit codes: config/usage -> 2, data/format/input/io/eval -> 3, training -> 4.
class Error : public std::runtime_error {
 public:
  enum class Kind { config, usage, data, format, input, io, eval, training, internal };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case Kind::config:
      case Kind::usage:
        return 2;
      case Kind::training:
        return 4;
      default:
        return 3;
    }
  }

 private:
  Kind kind_;
};

[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(Error::Kind::config, msg); }
[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(Error::Kind::usage, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(Error::Kind::data, msg); }
[[noreturn]] inline void throw_format(const std::string& msg) { throw Error(Error::Kind::format, msg); }
[[noreturn]] inline void throw_input(const std::string& msg) { throw Error(Error::Kind::input, msg); }
[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(Error::Kind::io, msg); }
[[noreturn]] inline void throw_eval(const std::string& msg) { throw Error(Error::Kind::eval, msg); }
[[noreturn]] inline void throw_training(const std::string& msg) { throw Error(Error::Kind::training, msg); }
[[noreturn]] inline void throw_internal(const std::string& msg) { throw Error(Error::Kind::internal, msg); }

inline void log_warn(const std::string& msg) { std::cerr << "awe-forge: warning: " << msg << "\n"; }

inline bool all_finite(const Mat& m) { return m.allFinite(); }
inline bool all_finite(const Vec& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// Deterministic RNG
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// mt19937_64 engine (bit-exact across platforms) with explicitly coded
// distributions, so that corpora and training runs reproduce everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive on both ends; unbiased via rejection
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw_internal("uniform_int: empty range");
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % range);
  }

  // Box-Muller; the sine companion is dropped to keep the state trivial
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Independent child stream for a named purpose.
  Rng derive(std::string_view tag) const {
    return Rng(splitmix64(seed_of(engine_) ^ fnv1a64(tag)));
  }
  Rng derive(uint64_t a, uint64_t b = 0) const {
    return Rng(splitmix64(splitmix64(seed_of(engine_) ^ a) ^ b));
  }

  static Rng derived(uint64_t seed, std::string_view tag) {
    return Rng(splitmix64(seed ^ fnv1a64(tag)));
  }
  static Rng derived(uint64_t seed, std::string_view tag, uint64_t index) {
    return Rng(splitmix64(splitmix64(seed ^ fnv1a64(tag)) ^ index));
  }

 private:
  // mt19937_64 exposes no seed getter; keep a shadow copy for derive().
  struct SeededEngine {
    explicit SeededEngine(uint64_t s) : seed(s), mt(s) {}
    uint64_t operator()() { return mt(); }
    uint64_t seed;
    std::mt19937_64 mt;
  };

  static uint64_t seed_of(const SeededEngine& e) { return e.seed; }

  SeededEngine engine_;
};

// ---------------------------------------------------------------------------
// Little-endian binary I/O
// ---------------------------------------------------------------------------

namespace io {

inline void write_bytes(std::ostream& os, const void* data, size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!os) throw_io("write failed");
}

inline void read_bytes(std::istream& is, void* data, size_t n, const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw_format(std::string("truncated input while reading ") + what);
}

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));  // little-endian hosts only
  write_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  read_bytes(is, buf, sizeof(T), what);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<uint32_t>(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, const char* what) {
  uint32_t n = read_le<uint32_t>(is, what);
  std::string s(n, '\0');
  if (n > 0) read_bytes(is, s.data(), n, what);
  return s;
}

inline void write_magic(std::ostream& os, const char magic[4]) { write_bytes(os, magic, 4); }

inline void expect_magic(std::istream& is, const char magic[4], const char* what) {
  char buf[4];
  read_bytes(is, buf, 4, what);
  if (std::memcmp(buf, magic, 4) != 0)
    throw_format(std::string("bad magic for ") + what);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_io("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_io("cannot open for reading: " + path);
  return is;
}

inline std::string read_file(const std::string& path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  auto os = open_out(path);
  write_bytes(os, content.data(), content.size());
}

inline bool file_exists(const std::string& path) {
  std::ifstream is(path);
  return is.good();
}

}  // namespace io

inline std::string hash_bytes_hex(const std::string& bytes) {
  uint64_t h = fnv1a64(bytes.data(), bytes.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string hash_file_hex(const std::string& path) {
  return hash_bytes_hex(io::read_file(path));
}

// Shortest round-trippable decimal form of a double.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace awe

#endif  // AWE_COMMON_HPP_
