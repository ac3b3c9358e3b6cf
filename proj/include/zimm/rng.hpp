#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace zimm {

/// Counter-based random stream. Draw i is a pure function of (seed, i), so
/// sequences are identical across runs and platforms. Child streams are
/// derived by key so that independent consumers never share draws.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p);
  std::size_t categorical(std::span<const double> probs);
  std::uint64_t poisson(double lambda);
  std::uint64_t geometric(double p);  // failures before first success
  std::vector<std::uint64_t> multinomial(std::uint64_t n, std::span<const double> probs);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  RngStream split(std::uint64_t key) const;
  RngStream split(std::string_view key) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace zimm
