#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace chest {

// ---------------------------------------------------------------------------
// Error taxonomy. Mapped to CLI exit codes in tools/chest_cli.cpp.
// ---------------------------------------------------------------------------

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class parse_error : public error {
 public:
  using error::error;
};

class schema_error : public error {
 public:
  using error::error;
};

class contract_error : public error {
 public:
  using error::error;
};

class config_error : public error {
 public:
  using error::error;
};

class dependency_error : public error {
 public:
  using error::error;
};

class numeric_fault : public error {
 public:
  using error::error;
};

class corrupt_corpus_error : public error {
 public:
  using error::error;
};

class overflow_error : public error {
 public:
  using error::error;
};

// ---------------------------------------------------------------------------
// Hashing / seed derivation.
// ---------------------------------------------------------------------------

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace rng {

// All randomness flows from one root seed through named sub-streams so that
// any unit of work (a walk, a batch item, a user's candidate list) owns a
// stream derived only from stable identifiers, never from schedule order.
inline std::uint64_t derive(std::uint64_t root, std::string_view name) {
  return splitmix64(root ^ fnv1a64(name));
}

inline std::uint64_t derive(std::uint64_t root, std::string_view name,
                            std::uint64_t a, std::uint64_t b = 0,
                            std::uint64_t c = 0) {
  std::uint64_t h = derive(root, name);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : gen_(seed) {}

  std::mt19937_64& gen() { return gen_; }

  // Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen_);
  }

  double real() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

  double real(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  bool bernoulli(double p) { return real() < p; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace rng

// ---------------------------------------------------------------------------
// Deterministic data-parallel helper: the index range is cut into `chunks`
// contiguous pieces whose boundaries depend only on (n, chunks), so any
// chunk-ordered reduction is schedule-independent.
// ---------------------------------------------------------------------------

inline unsigned default_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

inline void parallel_chunks(std::size_t n, unsigned chunks,
                            const std::function<void(std::size_t, std::size_t,
                                                     unsigned)>& fn) {
  if (n == 0) return;
  if (chunks <= 1 || n == 1) {
    fn(0, n, 0);
    return;
  }
  if (chunks > n) chunks = static_cast<unsigned>(n);
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  const std::size_t base = n / chunks;
  const std::size_t rem = n % chunks;
  std::size_t begin = 0;
  for (unsigned t = 0; t < chunks; ++t) {
    const std::size_t len = base + (t < rem ? 1 : 0);
    const std::size_t end = begin + len;
    pool.emplace_back([&fn, begin, end, t] { fn(begin, end, t); });
    begin = end;
  }
  for (auto& th : pool) th.join();
}

}  // namespace chest
