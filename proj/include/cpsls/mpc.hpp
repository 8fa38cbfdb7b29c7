#pragma once

#include "cpsls/common.hpp"
#include "cpsls/conformal.hpp"
#include "cpsls/models.hpp"
#include "cpsls/sls.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cpsls::mpc {

/// Tube-MPC flavor. CpEllipsoid calibrates a local error ellipsoid at every
/// horizon step; CpBall calibrates one isotropic radius per solve and holds
/// it constant across the horizon; Vmpc plans on the learned nominal model
/// with no disturbance channels and no constraint tightening.
enum class Mode { CpEllipsoid, CpBall, Vmpc };

[[nodiscard]] Mode mode_from_string(const std::string& name);
[[nodiscard]] std::string to_string(Mode mode);

/// Data-proximity cost: each horizon step contributes
/// exp[-(G k_goal + sum_j k_j) / (L + G)] where k_goal is a Gaussian kernel
/// on (position, velocity) distance to the goal and k_j are kernels on the
/// position distance to the representative calibration points. Minimizing it
/// pulls the nominal trajectory toward regions where the model was fit.
struct ActiveCostConfig {
  bool enabled{false};
  std::vector<Vec> centroids;  ///< representative positions (2-vectors)
  int l_reps{800};             ///< centroid budget for kmeans_representatives
  double goal_count{200.0};    ///< G: phantom data points placed at the goal
  double beta{3.0};            ///< kernel sharpness
  double weight{1000.0};       ///< multiplier inside the total objective
  std::vector<int> pos_dims{0, 1};
  int vel_dim{3};              ///< state index paired with the goal kernel; -1 drops it
};

struct MpcConfig {
  int T{15};                     ///< horizon in states (T-1 controls)
  double alpha_k{0.1 / 15.0};    ///< per-step miscoverage budget
  Mode mode{Mode::CpEllipsoid};
  double rho{0.97};              ///< conformal distance-decay base

  // Nominal-trajectory cost: sum of z'Qz, (dz)'Q_s(dz), u'Ru stage terms
  // plus the terminal (z_T - goal)'Q_f(z_T - goal).
  Mat Q_f;
  Mat Q_s;
  Mat Q;
  Mat R_ctrl;

  // Square roots of the tube-volume weights; the response recursion uses
  // their squares, so the published 1e6*I choice only fixes the scale.
  Mat tube_P_sqrt;
  Mat tube_Q_sqrt;
  Mat tube_R_sqrt;

  Vec goal;                       ///< full goal state
  std::vector<int> goal_dims{0, 1};  ///< position block tested for arrival
  double goal_radius{0.1};
  int max_steps{200};

  Vec rest_control;               ///< initial-plan control (zero / hover)
  int warmup_iters{5};
  double trust_radius{1.0};
  qp::QpOptions qp{200, 1e-6};

  ActiveCostConfig active{};

  /// Shape and definiteness checks (Q_f, Q_s, Q PSD; R_ctrl PD; tube roots
  /// PD; T >= 1; alpha_k in (0,1); rho in (0,1]). Throws std::invalid_argument.
  void validate(int nx, int nu) const;

  [[nodiscard]] static MpcConfig car_defaults();
  [[nodiscard]] static MpcConfig quad_defaults();
};

/// Learned one-step dynamics and local covariance factor used for planning.
struct LearnedModels {
  models::MlpParams mean;  ///< next-state predictor on [x; u]
  models::MlpParams cov;   ///< raw Cholesky head for the local error shape
  double tau{1.0};         ///< covariance blend passed to cov_forward
  double diag_floor{1e-4};
};

[[nodiscard]] Vec predict(const LearnedModels& m, const Vec& x, const Vec& u);

struct Plan {
  sls::Trajectory nominal;        ///< x: T states, u: T-1 controls
  sls::SystemResponse response;
  sls::Tube tube;
  sls::ScpStatus status{sls::ScpStatus::MaxIter};
  std::vector<double> quantiles;  ///< per-transition calibrated radii (T-1)
  bool degraded{false};           ///< an infinite quantile was replaced by the
                                  ///< largest finite score (coverage weakened)
  double objective{0.0};          ///< nominal cost incl. weighted active term
};

/// Closed-loop problem: the true plant, the constraint set, and the start.
/// Obstacle centers are used only for logging clearance.
struct Task {
  std::function<Vec(const Vec&, const Vec&)> true_step;
  std::vector<sls::ConstraintSpec> constraints;
  std::vector<Vec> obstacle_centers;
  Vec start;
  /// Optional scenario-supplied initial nominal states (horizon-many entries,
  /// first equal to the start). Scenarios use it to seed the warm-up with a
  /// straight position path whose heading/speed coordinates follow the path,
  /// which keeps the first linearization controllable; when absent the runner
  /// interpolates the raw state vector toward the goal.
  std::function<std::vector<Vec>(const Vec& x0)> initial_states;
};

enum class RunStatus { ReachedGoal, MaxSteps };

struct StepRecord {
  Vec x;                          ///< state the control was computed at
  Vec u;                          ///< applied first control
  double solve_seconds{0.0};
  double prediction_error{0.0};   ///< || f(x,u) - fhat(x,u) ||_2
  double margin{0.0};             ///< realized-error score minus local quantile
                                  ///< (NaN for Vmpc; -inf when the quantile is
                                  ///< infinite, i.e. trivially covered)
  double min_obstacle_distance{0.0};  ///< position distance to nearest center
  double tube_log_volume{0.0};    ///< sum of log state extents of the plan
  double quantile{0.0};           ///< first-step calibrated radius
  bool degraded{false};
};

struct RunLog {
  std::vector<StepRecord> steps;
  RunStatus status{RunStatus::MaxSteps};
  Vec final_state;
  std::uint64_t seed{0};
  int solves{0};  ///< SCP solves including warm-up iterations
};

/// Stage cost of the nominal trajectory plus the terminal goal term.
[[nodiscard]] double lqr_cost(const std::vector<Vec>& z, const std::vector<Vec>& v,
                              const MpcConfig& cfg);

/// Tube-volume surrogate: squared Frobenius norms of the weighted response
/// blocks (terminal state row weighted by P, earlier rows by Q, applied
/// control rows by R; the weights are the square-root matrices).
[[nodiscard]] double tube_cost(const sls::SystemResponse& resp, const Mat& P_sqrt,
                               const Mat& Q_sqrt, const Mat& R_sqrt);

/// Seeded Lloyd iteration. Returns min(l_reps, #distinct points) centroids;
/// when every point survives deduplication they are returned directly.
[[nodiscard]] std::vector<Vec> kmeans_representatives(const std::vector<Vec>& points,
                                                      int l_reps, std::uint64_t seed);

/// Data-proximity cost of a nominal trajectory (see ActiveCostConfig).
/// `v` is unused (the kernel reads the velocity out of the state) and kept
/// for signature symmetry with lqr_cost.
[[nodiscard]] double active_cost(const std::vector<Vec>& z, const std::vector<Vec>& v,
                                 const std::vector<Vec>& centroids, const Vec& goal,
                                 const ActiveCostConfig& acfg);

/// Exact gradient of one active-cost step with respect to the state (zero
/// outside the kernel dimensions); the planner's Gauss-Newton curvature is
/// built from it.
[[nodiscard]] Vec active_cost_gradient(const Vec& z_k,
                                       const std::vector<Vec>& centroids,
                                       const Vec& goal, const ActiveCostConfig& acfg);

/// Straight-line state interpolation from x0 to the goal with the resting
/// control on every step; response and quantiles start empty.
[[nodiscard]] Plan initial_plan(const Vec& x0, const MpcConfig& cfg);

/// Receding-horizon shift: drop the first state and control, duplicate the
/// last ones. Response, tube, and quantiles are cleared (stale).
[[nodiscard]] Plan shift_plan(const Plan& plan);

/// One real-time SCP iteration. Linearizes the learned mean around the
/// carried nominal exactly as given — dynamics defects and the offset from
/// the measured state enter the subproblem, so a dynamically infeasible
/// nominal (e.g. the straight-line initialization) is a valid starting
/// point — calibrates the per-step disturbance directions, builds the
/// response by the tube-weighted Riccati recursion, and solves the
/// trust-region QP for the nominal update. An infeasible subproblem widens
/// the trust region (bounded doubling) before giving up; a step that raises
/// the realized cost of an optimal carried plan narrows it (bounded
/// halving), keeping the best candidate. On success the updated controls
/// are re-rolled from the measured state so the returned nominal satisfies
/// the learned dynamics exactly; on failure the carried plan is returned
/// unchanged with the status flag set.
[[nodiscard]] Plan solve_plan(const Vec& x0, const Plan& prev, const MpcConfig& cfg,
                              const std::vector<sls::ConstraintSpec>& constraints,
                              const LearnedModels& models,
                              const conformal::ErrorSet& set);

/// Closed-loop receding-horizon run: warm-up solves, then per step one SCP
/// solve, apply the first control to the true plant, log metrics of the
/// realized transition, and append the observed residual to the error set.
/// Terminates when the position block reaches the goal radius or after
/// max_steps. The seed is recorded in the log (the benchmark plants are
/// deterministic).
[[nodiscard]] RunLog run_mpc(const Task& task, const MpcConfig& cfg,
                             const LearnedModels& models,
                             conformal::ErrorSet& set, std::uint64_t seed);

}  // namespace cpsls::mpc
