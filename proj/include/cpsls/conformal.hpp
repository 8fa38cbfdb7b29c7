#pragma once

#include "cpsls/common.hpp"
#include "cpsls/models.hpp"

#include <span>
#include <string>
#include <vector>

namespace cpsls::conformal {

/// One calibration sample: the conditioning pair and the one-step model
/// residual observed there.
struct CalibPoint {
  Vec x;
  Vec u;
  Vec residual;
};

/// Distance-weighted calibration set. Weights decay as rho^distance from the
/// query pair. `nearest_subset` > 0 restricts scoring to that many nearest
/// calibration points (the discarded weight mass only enlarges the quantile,
/// so validity is preserved); 0 scores the full set.
struct ErrorSet {
  std::vector<CalibPoint> points;
  double rho{0.97};
  int nearest_subset{0};

  void append(CalibPoint pt);
  [[nodiscard]] int count() const { return static_cast<int>(points.size()); }
};

/// Weighted quantile value; `infinite` marks the case where the finite
/// support does not reach the requested level and the quantile is +inf.
struct QuantileResult {
  double value{0.0};
  bool infinite{false};
};

/// Normalized conformal weights: w[i] for the calibration points that were
/// scored (indices parallel `index`) and w_test for the query's own atom.
/// They sum to at most 1; the deficit is mass discarded by the
/// nearest-subset acceleration.
struct WeightVector {
  std::vector<double> w;
  std::vector<int> index;
  double w_test{0.0};
};

/// Mahalanobis nonconformity score ||L^{-1} r||_2 where L is the (lower)
/// Cholesky factor of the local covariance.
[[nodiscard]] double score(const Mat& L, const Vec& residual);

/// Distance-decay weights rho^||(z,v) - (x_i,u_i)||_2, normalized together
/// with a unit test weight: w_i / (1 + sum_j w_j).
[[nodiscard]] WeightVector weights(const ErrorSet& set, const Vec& z, const Vec& v);

/// Smallest score s such that the accumulated weight of {scores <= s} plus
/// nothing reaches `level`; returns infinite when the finite mass (plus the
/// discarded remainder, conservatively counted toward +inf) cannot reach it.
/// `weights.w` must be normalized (the shared normalizer already includes
/// w_test). Atoms with equal scores accumulate together before comparison.
[[nodiscard]] QuantileResult weighted_quantile(std::span<const double> scores,
                                               const WeightVector& weights,
                                               double level);

/// Calibrated radius q_{1-alpha}(z, v) for the ellipsoid shaped by L.
[[nodiscard]] QuantileResult calibrate(const ErrorSet& set, const Mat& L,
                                       const Vec& z, const Vec& v, double alpha);

/// Isotropic variant: scores with the identity shape, so the calibrated set
/// is the Euclidean ball of radius q.
[[nodiscard]] QuantileResult ball_variant(const ErrorSet& set, const Vec& z,
                                          const Vec& v, double alpha);

/// Largest finite score in the weighted support; fallback radius when the
/// quantile is infinite (coverage is then degraded and must be flagged).
[[nodiscard]] double max_finite_score(const ErrorSet& set, const Mat& L,
                                      const Vec& z, const Vec& v);

/// Disturbance-direction matrix V = q * L. Throws std::domain_error when the
/// quantile is infinite; callers decide the fallback policy.
[[nodiscard]] Mat v_matrix(const QuantileResult& q, const Mat& L);

/// Calibrated ellipsoid {y : ||L^{-1}(y - center)|| <= q}.
struct EllipsoidErrorSet {
  Vec center;
  Mat L;
  double q{0.0};
};

struct Membership {
  bool inside{false};
  double margin{0.0};  ///< score - q; negative strictly inside
};

[[nodiscard]] Membership contains(const EllipsoidErrorSet& set, const Vec& y);

/// Appends the observed one-step residual next_true - model(x, u).
void online_update(ErrorSet& set, const Vec& x, const Vec& u, const Vec& next_true,
                   const models::MlpParams& dyn_model);

/// Columnar binary persistence (header with dimensions + count, then rows of
/// x, u, residual).
void save_error_set(const ErrorSet& set, const std::string& path);
[[nodiscard]] ErrorSet load_error_set(const std::string& path, double rho);

}  // namespace cpsls::conformal
