#pragma once

#include "cpsls/mpc.hpp"

#include <string>
#include <vector>

namespace cpsls::metrics {

/// Aggregates of one closed-loop run. Step statistics are NaN when the run
/// executed no steps; coverage is the fraction of steps whose ellipsoid
/// margin is <= 0, computed over steps that have a margin (NaN margins --
/// the uncalibrated planner -- are excluded, and coverage itself is NaN when
/// no step has one).
struct TrialMetrics {
  int steps{0};
  double mean_step_ms{0.0};
  double std_step_ms{0.0};
  double mean_pred_error{0.0};
  double std_pred_error{0.0};
  double min_obstacle_distance{0.0};  ///< +inf when nothing was tracked
  double coverage{0.0};
  bool reached_goal{false};
  bool collided{false};  ///< some step's position entered an obstacle
  bool success{false};   ///< reached the goal without ever colliding
};

/// Distance below `obstacle_radius` at any step counts as a collision; a
/// radius of 0 treats the tracked centers as landmarks only.
[[nodiscard]] TrialMetrics compute_metrics(const mpc::RunLog& log,
                                           double obstacle_radius);

/// Cross-trial aggregation. Step time and prediction-error statistics are
/// pooled over every step of every trial; min-obstacle-distance and
/// coverage are averaged over trials (skipping NaN coverages).
struct MetricsSummary {
  std::vector<TrialMetrics> per_trial;
  int trials{0};
  double mean_step_ms{0.0};
  double std_step_ms{0.0};
  double mean_pred_error{0.0};
  double std_pred_error{0.0};
  double mean_min_obstacle_distance{0.0};
  double mean_coverage{0.0};
  int success_count{0};
  int collision_count{0};
};

[[nodiscard]] MetricsSummary summarize(const std::vector<mpc::RunLog>& logs,
                                       double obstacle_radius);

/// One CSV row per trial plus a trailing `all` row with the pooled columns.
void write_summary_csv(const MetricsSummary& summary, const std::string& path);

}  // namespace cpsls::metrics
