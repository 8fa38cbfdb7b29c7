#pragma once

#include "cpsls/common.hpp"
#include "cpsls/dynamics.hpp"
#include "cpsls/io.hpp"

#include <functional>
#include <vector>

namespace cpsls::sampling {

struct Interval {
  double lo{0.0};
  double hi{0.0};
};

/// Uniform rejection-sampling specification over a state-control box with an
/// optional state inclusion predicate (out-of-distribution bands, forbidden
/// disks, ...). Counts are per split; each split draws from its own RNG
/// stream, so splits are disjoint by construction.
struct SamplingSpec {
  std::vector<Interval> state_ranges;
  std::vector<Interval> control_ranges;
  std::function<bool(const Vec&)> include;  ///< empty = accept everything
  int train_count{10000};
  int uncertainty_count{10000};
  int calibration_count{2000};
  std::uint64_t seed{0};

  /// Throws std::invalid_argument on empty intervals (lo >= hi) or
  /// non-positive counts.
  void validate() const;
};

struct SplitSet {
  io::SampleSet train;
  io::SampleSet uncertainty;
  io::SampleSet calibration;
};

/// Published car sampling boxes: positions in [0,5] x [-5,5], heading in
/// [-pi, pi], velocity in [-10, 10], controls in [-10, 10]^2, specialized
/// per scenario (out-of-distribution band |p_y| in [6,12], disjoint-domain
/// band |p_y| in [2,5], unit-disk exclusion around (2.5, 0)) with desk-scale
/// default counts.
[[nodiscard]] SamplingSpec car_sampling_spec(dynamics::ScenarioTag tag,
                                             std::uint64_t seed);

/// Draws uniform points from the box, keeps those passing the predicate,
/// labels each accepted point with one discrete step of `true_dyn`, and
/// fills the three splits to their exact counts. Deterministic given the
/// seed. Throws std::runtime_error when the predicate acceptance rate falls
/// below 1e-3 (measured after 1000 attempts).
[[nodiscard]] SplitSet sample_dataset(const SamplingSpec& spec,
                                      const dynamics::DiscreteDynamics& true_dyn);

/// Trajectory-data generation for the quadcopter: initial states drawn from
/// the published bounds (positions in [0,5]^3 outside the unit sphere at
/// (2.5, 2.5, 2.5), angles in [-pi/4, pi/4], velocities in [-5, 5], rates in
/// [-2, 2]), rolled for `horizon` steps under randomized near-hover thrust
/// (within [0, 19.62]) and small torques in [-0.1, 0.1]; the in-bounds prefix
/// of each rollout is kept. This substitutes short random rollouts for
/// optimizer-generated expert trajectories.
struct QuadDataSpec {
  int train_count{10000};
  int uncertainty_count{10000};
  int calibration_count{2000};
  int horizon{20};
  double thrust_jitter{0.3};     ///< relative half-width around hover thrust
  int max_trajectories{400000};  ///< per-split abort threshold
  std::uint64_t seed{0};

  void validate() const;
};

/// Throws std::runtime_error when a split cannot be filled within
/// max_trajectories rollouts.
[[nodiscard]] SplitSet quad_trajectory_data(const QuadDataSpec& spec,
                                            const dynamics::DiscreteDynamics& true_dyn);

}  // namespace cpsls::sampling
