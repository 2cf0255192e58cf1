#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace birdnest {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Concentration parameters of a Dirichlet; every entry > 0, length >= 2.
using DirichletParams = Eigen::VectorXd;
/// Per-category tallies; the total is `counts.sum()`.
using CountVector = Eigen::VectorXi;
/// A point on the probability simplex.
using SimplexPoint = Eigen::VectorXd;

using RandomSource = std::mt19937_64;

/// Malformed or unusable input data.
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numeric failure or a degenerate model/data configuration.
class model_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for a (seed, index, stream) triple; independent of iteration order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                                    std::uint64_t stream = 0) {
  return mix64(mix64(mix64(seed) ^ index) ^ (stream * 0xd1b54a32d192ed03ULL));
}

}  // namespace birdnest
