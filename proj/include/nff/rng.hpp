#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace nff {

/// Seeded random stream. The full state (engine plus the cached normal
/// deviate) round-trips through save()/restore(), which is what makes resumed
/// training identical to an uninterrupted run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  /// Independent child stream, derived deterministically from this one.
  Rng split() { return Rng(engine_()); }

  std::mt19937_64& engine() { return engine_; }

  std::string save() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
  }
  void restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_ >> normal_;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace nff
