#pragma once

#include "cpsls/dynamics.hpp"
#include "cpsls/mpc.hpp"
#include "cpsls/sls.hpp"

#include <functional>
#include <random>
#include <vector>

namespace cpsls::scenario {

/// Everything needed to roll a benchmark scenario: the true plant, the
/// planner configuration (mode left to the caller), the scenario's
/// constraints, the obstacle geometry used by the metrics, and seeded
/// start/goal samplers.
struct ScenarioSetup {
  dynamics::DiscreteDynamics true_dyn;
  mpc::MpcConfig mpc;
  std::vector<sls::ConstraintSpec> constraints;
  std::vector<Vec> obstacle_centers;  ///< in goal_dims coordinates
  double obstacle_radius{0.0};        ///< 0 = logged landmark, not a collider
  double tau{1.0};                    ///< covariance blend for the learned model
  std::function<Vec(std::mt19937_64&)> sample_start;  ///< full start state
  std::function<Vec(std::mt19937_64&)> sample_goal;   ///< full goal state
};

/// Scenario presets.
///
/// The car scenarios share the [0,5] x [-5,5] position box and, except for
/// the active-uncertainty one, a 1-m keep-out disk at (2.5, 0):
///  - CarId: starts on the west edge, goals on the east edge, unmodified
///    dynamics.
///  - CarOodAttract: same task, but the plant steers toward the disk for
///    |p_y| < 6 while the learned model is trained on |p_y| in [6, 12].
///  - CarFriction: starts in the north band, goals in the south band; the
///    plant adds friction everywhere and slip plus attraction in the
///    untrained middle band.
///  - CarActiveRegion: no keep-out constraint; the straight path crosses the
///    untrained disk, and the data-proximity cost (filled with centroids at
///    run time) is pre-enabled to route around it.
///  - QuadFall: 12-state quadcopter, keep-out sphere of radius 0.8 at
///    (2.5, 2.5, 2.5) inside a [0,5]^3 position box; the plant pulls
///    downward inside radius 1, leaving a traversable untrained shell.
[[nodiscard]] ScenarioSetup make_scenario(dynamics::ScenarioTag tag);

/// Draws a start state and goal state from the setup's samplers (one RNG
/// stream derived from the trial seed), writes the goal into `cfg`, and
/// binds the plant, constraints, and obstacle centers into a runnable task.
[[nodiscard]] mpc::Task make_task(const ScenarioSetup& setup, mpc::MpcConfig& cfg,
                                  std::uint64_t trial_seed);

}  // namespace cpsls::scenario
