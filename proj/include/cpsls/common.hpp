#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace cpsls {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// A paired state/control sample (z, v) or (x, u).
struct StateControlPoint {
  Vec x;
  Vec u;
};

/// Throws std::invalid_argument if any entry of `v` is NaN or infinite.
inline void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
  }
}

inline void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
  }
}

/// Derives an independent RNG stream from a base seed and a stream index.
/// Uses splitmix64 on the combined value so that nearby seeds do not yield
/// overlapping mt19937_64 states.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z = z ^ (z >> 31);
  return std::mt19937_64(z);
}

}  // namespace cpsls
