#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace odml {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

namespace detail {
template <typename Derived>
typename Derived::Scalar pairwise_sum_range(const Eigen::DenseBase<Derived>& v,
                                            Index begin, Index end) {
  using Scalar = typename Derived::Scalar;
  const Index len = end - begin;
  if (len <= 16) {
    Scalar s(0);
    for (Index i = begin; i < end; ++i) s += v.derived().coeff(i);
    return s;
  }
  const Index mid = begin + len / 2;
  return pairwise_sum_range(v, begin, mid) + pairwise_sum_range(v, mid, end);
}
}  // namespace detail

// Summation with a fixed, length-only dependent reduction tree. Score
// aggregation goes through here so results never depend on scheduling.
template <typename Derived>
typename Derived::Scalar pairwise_sum(const Eigen::DenseBase<Derived>& v) {
  return detail::pairwise_sum_range(v, 0, v.size());
}

template <typename Derived>
typename Derived::Scalar pairwise_mean(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  return pairwise_sum(v) / Scalar(v.size());
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Labeled seed derivation: independent streams for independent consumers of
// one top-level seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x51ed270b27a1f3c5ULL));
}

// Uniform on [0, 1) from the top 53 bits; platform independent unlike
// std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Fisher-Yates with explicit index draws, so the permutation is fixed by the
// generator alone.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace odml
