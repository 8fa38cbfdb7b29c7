#pragma once

#include "cpsls/common.hpp"
#include "cpsls/sls.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cpsls::theory {

/// Gamma distribution parameters (shape-scale form).
struct GammaSpec {
  double shape{1.0};
  double scale{1.0};
};

/// Total-variation distance 1/2 int |p - q| between two gamma densities,
/// computed by adaptive Simpson quadrature on log-spaced panels; the window
/// covers both distributions until their tails fall below 1e-10. Absolute
/// accuracy ~1e-6 or better. Throws on non-finite results.
[[nodiscard]] double tv_numeric(const GammaSpec& p, const GammaSpec& q);

/// Total-variation distance between two arbitrary densities supported on
/// [lo, hi]; the generic backend behind tv_numeric, exposed for synthetic
/// density tests.
[[nodiscard]] double tv_between(const std::function<double(double)>& p,
                                const std::function<double(double)>& q, double lo,
                                double hi, double tol = 1e-7);

/// Estimated spatial Lipschitz factor of a score-distribution field:
/// max over sampled point pairs of d_TV / euclidean distance.
struct LipschitzEstimate {
  double epsilon{0.0};
  int pairs_used{0};
};

/// Samples `pairs` point pairs uniformly on the unit disk (seeded) and
/// maximizes the TV-to-distance ratio. Coincident pairs are skipped.
[[nodiscard]] LipschitzEstimate lipschitz_estimate(
    const std::function<GammaSpec(double, double)>& field, int pairs,
    std::uint64_t seed);

/// Density-valued variant for synthetic fields; densities share the support
/// window [lo, hi].
struct DensityField {
  std::function<std::function<double(double)>(double, double)> density;
  double lo{0.0};
  double hi{1.0};
};

[[nodiscard]] LipschitzEstimate lipschitz_estimate_density(const DensityField& field,
                                                           int pairs,
                                                           std::uint64_t seed);

/// Coverage-gap bounds evaluated for one query: `exact` plugs per-point TV
/// distances into the weighted Barber sum; `tight` replaces them with the
/// Lipschitz surrogate epsilon * d_i; `interpretable` is the closed-form
/// geometric-series bound (infinite when consecutive distances tie, since
/// the bounding series degenerates); `asymptotic` is its large-sample
/// refinement. The latter two need at least two calibration points.
struct GapBoundReport {
  std::optional<double> exact;
  double tight{0.0};
  std::optional<double> interpretable;
  std::optional<double> asymptotic;
  std::vector<double> distances;
  double rho{0.0};
  double epsilon{0.0};
};

/// distances must be sorted ascending and nonnegative; rho in (0,1);
/// epsilon >= 0. When tv_values is given it must be parallel to distances.
[[nodiscard]] GapBoundReport gap_bounds(std::vector<double> distances, double rho,
                                        double epsilon,
                                        const std::vector<double>* tv_values = nullptr);

/// Coverage loss from enforcing the ellipsoid across a whole tube:
/// 2 * epsilon_hat * M where M is the longest axis (2 x extent) over all
/// state and control coordinates and steps.
[[nodiscard]] double tube_gap(double epsilon_hat, const sls::Tube& tube);

/// Horizon-total miscoverage: sum of alpha_k + gap_k + tube_gap_k. The same
/// summation covers the per-replan variant (pass the step-1 terms of each
/// solve).
[[nodiscard]] double total_miscoverage(const std::vector<double>& alpha,
                                       const std::vector<double>& gap_terms,
                                       const std::vector<double>& tube_gaps);

/// Score-distribution field of the planar toy study: a gamma whose shape
/// decays with the radius (clipped below to stay well-defined).
[[nodiscard]] GammaSpec toy_field(double x, double y);

struct ToyConfig {
  std::vector<int> n_calib{32, 128};
  std::vector<double> rho{0.999, 0.9, 0.5, 0.1};
  int trials{100};
  double alpha{0.1};
  std::uint64_t seed{2024};
  int epsilon_pairs{250};
  int tv_cache_size{1024};
};

struct ToyCell {
  double rho{0.0};
  int n_calib{0};
  double coverage{0.0};       ///< empirical, averaged over trials
  double barber_bound{0.0};   ///< 1 - alpha - weighted exact-TV gap (mean)
  double cpsls_bound{0.0};    ///< 1 - alpha - tight Lipschitz gap (mean)
  double infinite_rate{0.0};  ///< fraction of trials with an infinite quantile
};

/// Samples calibration points on the unit disk, draws scores from the toy
/// field, calibrates at the origin and tallies coverage plus both
/// theoretical lower bounds for every (rho, n) cell. Cells run in parallel
/// with per-cell seeds, so results are scheduling-independent.
[[nodiscard]] std::vector<ToyCell> toy_experiment(const ToyConfig& cfg);

void write_toy_csv(const std::vector<ToyCell>& cells, const std::string& path);

/// Mean normalized weight mass per radial distance bin (plus the test-point
/// mass), describing how the decay base concentrates calibration weight.
struct WeightHistogram {
  double rho{0.0};
  int n_calib{0};
  std::vector<double> bin_mass;  ///< bins equally spaced on [0, 1]
  double test_mass{0.0};
};

[[nodiscard]] WeightHistogram weight_histogram(int n_calib, double rho, int trials,
                                               int bins, std::uint64_t seed);

void write_weight_histograms_csv(const std::vector<WeightHistogram>& rows,
                                 const std::string& path);

}  // namespace cpsls::theory
