#include "zimm/rng.hpp"

#include <cmath>
#include <numbers>

namespace zimm {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t RngStream::next_u64() {
  return mix64(mix64(seed_) ^ (counter_++ * 0xd1b54a32d192ed03ULL));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // rejection keeps the draw exactly uniform
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  for (;;) {
    std::uint64_t x = next_u64();
    if (x < limit) return x % n;
  }
}

double RngStream::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

std::size_t RngStream::categorical(std::span<const double> probs) {
  const double u = uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // rounding: fall back to the last category with positive mass
  for (std::size_t i = probs.size(); i > 0; --i) {
    if (probs[i - 1] > 0.0) return i - 1;
  }
  return probs.size() - 1;
}

std::uint64_t RngStream::poisson(double lambda) {
  if (lambda <= 0.0) return 0;
  if (lambda > 30.0) {
    // split into independent chunks so the product method stays accurate
    std::uint64_t total = 0;
    while (lambda > 30.0) {
      total += poisson(30.0);
      lambda -= 30.0;
    }
    return total + poisson(lambda);
  }
  const double limit = std::exp(-lambda);
  std::uint64_t k = 0;
  double prod = uniform();
  while (prod > limit) {
    ++k;
    prod *= uniform();
  }
  return k;
}

std::uint64_t RngStream::geometric(double p) {
  std::uint64_t k = 0;
  while (!bernoulli(p)) ++k;
  return k;
}

std::vector<std::uint64_t> RngStream::multinomial(std::uint64_t n,
                                                  std::span<const double> probs) {
  std::vector<std::uint64_t> counts(probs.size(), 0);
  for (std::uint64_t i = 0; i < n; ++i) ++counts[categorical(probs)];
  return counts;
}

RngStream RngStream::split(std::uint64_t key) const {
  return RngStream(mix64(seed_ ^ mix64(key + 0x632be59bd9b4e019ULL)));
}

RngStream RngStream::split(std::string_view key) const { return split(fnv1a64(key)); }

}  // namespace zimm
