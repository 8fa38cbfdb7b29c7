#pragma once

#include "cpsls/common.hpp"
#include "cpsls/models.hpp"
#include "cpsls/qp.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cpsls::sls {

/// Time-varying linear model x_{k+1} = A_k x_k + B_k u_k + E_k xi_k with
/// ||xi_k||_2 <= 1. For a horizon of T states the lists hold T-1 entries
/// (transitions k = 0 .. T-2). E_k carries the calibrated disturbance
/// directions, so its columns scale with the local error ellipsoid.
struct LtvModel {
  std::vector<Mat> A;
  std::vector<Mat> B;
  std::vector<Mat> E;

  [[nodiscard]] int horizon() const { return static_cast<int>(A.size()) + 1; }
  void validate() const;
};

/// Nominal or realized trajectory: x has T states, u has T-1 controls.
struct Trajectory {
  std::vector<Vec> x;
  std::vector<Vec> u;
};

/// Causal disturbance response. phi_x[k][j] maps the unit-ball disturbance
/// injected at transition j into the state deviation at step k (k >= 1,
/// j < k, phi_x[0] empty); phi_u[k][j] is the matching control-deviation
/// block. A phi_u row exists for every k >= 1 including the terminal state,
/// where it only shapes constraint tightening (no control is applied there).
struct SystemResponse {
  std::vector<std::vector<Mat>> phi_x;
  std::vector<std::vector<Mat>> phi_u;

  [[nodiscard]] int horizon() const { return static_cast<int>(phi_x.size()); }
};

/// Worst violation of the response consistency conditions
/// phi_x[k+1][j] = A_k phi_x[k][j] + B_k phi_u[k][j] and phi_x[j+1][j] = E_j
/// (Frobenius norms). A valid response scores <= 1e-9 here.
[[nodiscard]] double response_residual(const LtvModel& ltv, const SystemResponse& resp);

/// Per-step axis-aligned tube widths around the nominal: state_extent[k](i)
/// bounds |x_k(i) - z_k(i)| over all unit-ball disturbance sequences, and is
/// exact (a support function of the Minkowski sum of ellipsoid images).
/// control_extent covers the T-1 applied controls.
struct Tube {
  std::vector<Vec> state_extent;
  std::vector<Vec> control_extent;
};

/// Scalar constraint g(x, u) + b <= 0 with a gradient oracle. `uses_control`
/// selects which horizon steps enforce it (controls exist only up to T-2).
struct ConstraintSpec {
  std::function<double(const Vec&, const Vec&)> g;
  /// Fills grad_x (n_x) and grad_u (n_u) at (x, u).
  std::function<void(const Vec&, const Vec&, Vec&, Vec&)> grad;
  double b{0.0};
  bool uses_control{false};
  std::string name;
};

/// c_x . x + c_u . u + b <= 0.
[[nodiscard]] ConstraintSpec linear_constraint(Vec c_x, Vec c_u, double b,
                                               std::string name = "linear");

/// Keep-out disc: radius - ||x(dims) - center|| <= 0 (the trajectory must
/// stay outside). `dims` selects the position coordinates inside the state.
[[nodiscard]] ConstraintSpec keep_out_circle(Vec center, double radius,
                                             std::vector<int> dims,
                                             std::string name = "keep-out");

/// Pair of Jacobians of one dynamics step with respect to state and control.
struct Linearization {
  Mat A;
  Mat B;
};

/// Jacobians of the learned one-step model at (z, v).
[[nodiscard]] Linearization linearize(const models::MlpParams& model, const Vec& z,
                                      const Vec& v);

/// Central-difference Jacobians of an arbitrary step map; oracle-grade
/// fallback for ground-truth systems and for gradient checks.
[[nodiscard]] Linearization numeric_jacobian(
    const std::function<Vec(const Vec&, const Vec&)>& step, const Vec& z,
    const Vec& v, double eps = 1e-6);

/// Applies the disturbance-feedback law: x_k = z_k + sum_j phi_x[k][j] xi_j,
/// u_k = v_k + sum_j phi_u[k][j] xi_j. Requires a consistent response
/// (residual <= tol) and ||xi_k||_2 <= 1.
[[nodiscard]] Trajectory closed_loop_rollout(const LtvModel& ltv,
                                             const SystemResponse& resp,
                                             const Trajectory& nominal,
                                             const std::vector<Vec>& xi,
                                             double residual_tol = 1e-8);

[[nodiscard]] Tube tube_extents(const SystemResponse& resp, const Trajectory& nominal);

/// Left-hand side of the tightened constraint at step k:
///   sum_j ||[grad_x g . phi_x[k][j], grad_u g . phi_u[k][j]]|| + g(z,v) + b.
/// The caller enforces <= 0. Pass the nominal (z_k, v_k); for state-only
/// constraints v may be any correctly sized vector.
[[nodiscard]] double tighten(const ConstraintSpec& c, const SystemResponse& resp,
                             const Vec& z, const Vec& v, int k);

/// Builds the response by backward Riccati recursion: feedback gains from
/// (Q, R, terminal P), then phi_x[j+1][j] = E_j propagated through the
/// closed-loop maps A_k + B_k K_k, with phi_u = K phi_x. The terminal phi_u
/// row reuses the held terminal P with the last (A, B) pair. Throws when an
/// innovation matrix R + B' P B stops being positive definite.
[[nodiscard]] SystemResponse riccati_phi(const LtvModel& ltv, const Mat& P_term,
                                         const Mat& Q, const Mat& R);

enum class ScpStatus { Optimal, Infeasible, MaxIter };

/// Nominal-trajectory update from one convex subproblem. dz has T entries
/// (dz[0] = x0 - z_0 is fixed, not optimized); dv has T-1.
struct ScpResult {
  std::vector<Vec> dz;
  std::vector<Vec> dv;
  ScpStatus status{ScpStatus::Infeasible};
  double objective{0.0};
};

/// Quadratic cost 1/2 w'Hw + g'w over the stacked update
/// w = (dz_1..dz_{T-1}, dv_0..dv_{T-2}).
struct QuadCost {
  Mat H;
  Vec g;
};

/// Solves the convex subproblem of one SCP iteration: linearized dynamics
/// equalities dz_{k+1} = A_k dz_k + B_k dv_k + (fhat_k - z_{k+1}), constraint
/// rows grad g . (dz_k, dv_k) <= -tighten(c, resp, z_k, v_k, k) with the
/// tube margins frozen at the current nominal, and an l-inf trust region on
/// every update entry. fhat[k] = model(z_k, v_k) supplies the defect terms.
[[nodiscard]] ScpResult scp_subproblem(const Trajectory& nominal, const LtvModel& ltv,
                                       const SystemResponse& resp,
                                       const std::vector<ConstraintSpec>& constraints,
                                       const QuadCost& cost, const Vec& x0,
                                       const std::vector<Vec>& fhat,
                                       double trust_radius,
                                       const qp::QpOptions& qp_options = {});

/// Serializes the response blocks and tube extents for offline plotting.
void dump_response_json(const LtvModel& ltv, const SystemResponse& resp,
                        const Trajectory& nominal, const std::string& path);

}  // namespace cpsls::sls
