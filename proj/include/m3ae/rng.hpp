#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace m3ae {

/// Seedable random source used for every sampling decision in the pipeline.
///
/// Streams are derived from a root seed plus a list of stream keys (stage,
/// epoch, subject index, ...), so the draws for a given item never depend on
/// how many items were processed before it or on which thread processes it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  /// Uniform integer in the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double uniform(double lo, double hi);
  bool bernoulli(double p);
  double normal(double mean = 0.0, double stddev = 1.0);

  std::uint64_t next_u64() { return engine_(); }

  std::string state() const;
  void set_state(const std::string& state);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace m3ae
