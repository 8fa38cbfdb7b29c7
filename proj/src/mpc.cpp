#include "cpsls/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cpsls::mpc {
namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_psd(const Mat& m, int n, const char* name, bool strict) {
  if (m.rows() != n || m.cols() != n) {
    throw std::invalid_argument(std::string(name) + ": wrong shape");
  }
  if ((m - m.transpose()).norm() > 1e-9 * (1.0 + m.norm())) {
    throw std::invalid_argument(std::string(name) + ": not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(m, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  if (strict ? lo <= 0.0 : lo < -1e-9) {
    throw std::invalid_argument(std::string(name) +
                                (strict ? ": not positive definite"
                                        : ": not positive semidefinite"));
  }
}

/// One step of the data-proximity cost: value e^h and the gradient of
/// h = -(G k_goal + sum_j k_j) / (L + G) with respect to the full state.
struct ActiveTerm {
  double value{1.0};
  Vec grad_h;
};

ActiveTerm active_term(const Vec& z, const std::vector<Vec>& centroids,
                       const Vec& goal, const ActiveCostConfig& a) {
  const int np = static_cast<int>(a.pos_dims.size());
  const double denom = static_cast<double>(centroids.size()) + a.goal_count;
  double psi = 0.0;
  Vec dpsi = Vec::Zero(z.size());
  if (a.goal_count > 0.0) {
    double sq = 0.0;
    for (int d : a.pos_dims) sq += (z(d) - goal(d)) * (z(d) - goal(d));
    if (a.vel_dim >= 0) sq += (z(a.vel_dim) - goal(a.vel_dim)) * (z(a.vel_dim) - goal(a.vel_dim));
    const double kg = a.goal_count * std::exp(-a.beta * sq);
    psi += kg;
    for (int d : a.pos_dims) dpsi(d) += kg * (-2.0 * a.beta) * (z(d) - goal(d));
    if (a.vel_dim >= 0) {
      dpsi(a.vel_dim) += kg * (-2.0 * a.beta) * (z(a.vel_dim) - goal(a.vel_dim));
    }
  }
  for (const Vec& c : centroids) {
    double sq = 0.0;
    for (int i = 0; i < np; ++i) {
      const double diff = z(a.pos_dims[i]) - c(i);
      sq += diff * diff;
    }
    const double kj = std::exp(-a.beta * sq);
    psi += kj;
    for (int i = 0; i < np; ++i) {
      dpsi(a.pos_dims[i]) += kj * (-2.0 * a.beta) * (z(a.pos_dims[i]) - c(i));
    }
  }
  ActiveTerm out;
  out.value = std::exp(-psi / denom);
  out.grad_h = -dpsi / denom;
  return out;
}

void check_active(const ActiveCostConfig& a, int nx) {
  require(a.beta > 0.0, "active cost: beta must be positive");
  require(a.goal_count >= 0.0 && a.weight >= 0.0,
          "active cost: goal count and weight must be nonnegative");
  require(static_cast<double>(a.centroids.size()) + a.goal_count > 0.0,
          "active cost: needs at least one kernel (centroid or goal count)");
  require(!a.pos_dims.empty(), "active cost: empty position block");
  for (int d : a.pos_dims) require(d >= 0 && d < nx, "active cost: position index");
  require(a.vel_dim >= -1 && a.vel_dim < nx, "active cost: velocity index");
  for (const Vec& c : a.centroids) {
    require(c.size() == static_cast<Eigen::Index>(a.pos_dims.size()),
            "active cost: centroid dimension");
  }
}

// Trust-region adaptation bounds: how often an infeasible subproblem may
// widen the radius (x2) and a cost-increasing step may narrow it (x0.5).
constexpr int kTrustGrowSteps = 6;
constexpr int kTrustShrinkSteps = 4;

void rolled_state(const LearnedModels& models, const std::vector<Vec>& v,
                  const Vec& x0, std::vector<Vec>& z) {
  z[0] = x0;
  for (std::size_t k = 0; k + 1 < z.size(); ++k) {
    z[k + 1] = predict(models, z[k], v[k]);
  }
}

}  // namespace

Mode mode_from_string(const std::string& name) {
  if (name == "cp-ellipsoid") return Mode::CpEllipsoid;
  if (name == "cp-ball") return Mode::CpBall;
  if (name == "vmpc") return Mode::Vmpc;
  throw std::invalid_argument("unknown MPC mode: " + name);
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::CpEllipsoid: return "cp-ellipsoid";
    case Mode::CpBall: return "cp-ball";
    case Mode::Vmpc: return "vmpc";
  }
  throw std::logic_error("unreachable");
}

void MpcConfig::validate(int nx, int nu) const {
  require(T >= 1, "MpcConfig: horizon must be at least 1");
  require(alpha_k > 0.0 && alpha_k < 1.0, "MpcConfig: alpha_k must be in (0,1)");
  require(rho > 0.0 && rho <= 1.0, "MpcConfig: rho must be in (0,1]");
  require_psd(Q_f, nx, "MpcConfig: Q_f", false);
  require_psd(Q_s, nx, "MpcConfig: Q_s", false);
  require_psd(Q, nx, "MpcConfig: Q", false);
  require_psd(R_ctrl, nu, "MpcConfig: R_ctrl", true);
  require_psd(tube_P_sqrt, nx, "MpcConfig: tube_P_sqrt", true);
  require_psd(tube_Q_sqrt, nx, "MpcConfig: tube_Q_sqrt", true);
  require_psd(tube_R_sqrt, nu, "MpcConfig: tube_R_sqrt", true);
  require(goal.size() == nx, "MpcConfig: goal dimension");
  require(!goal_dims.empty(), "MpcConfig: empty goal block");
  for (int d : goal_dims) require(d >= 0 && d < nx, "MpcConfig: goal index");
  require(goal_radius > 0.0, "MpcConfig: goal radius must be positive");
  require(max_steps >= 1, "MpcConfig: max_steps must be at least 1");
  require(rest_control.size() == nu, "MpcConfig: rest control dimension");
  require(warmup_iters >= 0, "MpcConfig: warmup iterations");
  require(trust_radius > 0.0, "MpcConfig: trust radius must be positive");
  if (active.enabled) check_active(active, nx);
}

MpcConfig MpcConfig::car_defaults() {
  constexpr int nx = 4, nu = 2;
  MpcConfig cfg;
  Vec qf(nx);
  qf << 1.0, 1.0, 0.0, 1.0;
  cfg.Q_f = qf.asDiagonal();
  cfg.Q_s = Mat::Zero(nx, nx);
  cfg.Q = Mat::Zero(nx, nx);
  Vec r(nu);
  r << 0.1, 0.1;
  cfg.R_ctrl = r.asDiagonal();
  // Tube-response weights. Position extents are what the box and keep-out
  // rows tighten with, so the state-tube weight concentrates on them; an
  // even weighting trades position damping against heading/speed excursions
  // and leaves the position tube growing for a whole horizon, which empties
  // the tightened corridor. The control-tube weight is kept small so the
  // Riccati gains contract wherever the linearization is controllable.
  Vec tube_q(nx);
  tube_q << 1e3, 1e3, 1.0, 1.0;
  cfg.tube_P_sqrt = tube_q.asDiagonal();
  cfg.tube_Q_sqrt = tube_q.asDiagonal();
  cfg.tube_R_sqrt = Mat::Identity(nu, nu);
  cfg.goal = Vec::Zero(nx);
  cfg.goal_dims = {0, 1};
  cfg.rest_control = Vec::Zero(nu);
  cfg.rho = 0.97;
  cfg.active.pos_dims = {0, 1};
  cfg.active.vel_dim = 3;
  return cfg;
}

MpcConfig MpcConfig::quad_defaults() {
  constexpr int nx = 12, nu = 4;
  MpcConfig cfg;
  Vec qf = Vec::Zero(nx);
  qf.segment(0, 3).setOnes();
  qf.segment(6, 3).setOnes();
  qf.segment(9, 3).setConstant(0.2);
  cfg.Q_f = qf.asDiagonal();
  Vec q = Vec::Zero(nx);
  q.segment(6, 3).setConstant(0.01);
  cfg.Q = q.asDiagonal();
  cfg.Q_s = Mat::Zero(nx, nx);
  Vec r(nu);
  r << 0.01, 0.1, 0.1, 0.1;
  cfg.R_ctrl = r.asDiagonal();
  cfg.tube_P_sqrt = 1e6 * Mat::Identity(nx, nx);
  cfg.tube_Q_sqrt = 1e6 * Mat::Identity(nx, nx);
  cfg.tube_R_sqrt = Mat::Identity(nu, nu);
  cfg.goal = Vec::Zero(nx);
  cfg.goal_dims = {0, 1, 2};
  cfg.rest_control = Vec::Zero(nu);
  cfg.rest_control(0) = 9.81;  // hover thrust for unit mass
  cfg.rho = 0.8;
  cfg.active.enabled = false;
  return cfg;
}

Vec predict(const LearnedModels& m, const Vec& x, const Vec& u) {
  return models::mlp_forward(m.mean, x, u);
}

double lqr_cost(const std::vector<Vec>& z, const std::vector<Vec>& v,
                const MpcConfig& cfg) {
  require(!z.empty() && z.size() == v.size() + 1, "lqr_cost: horizon mismatch");
  double cost = 0.0;
  for (std::size_t k = 0; k + 1 < z.size(); ++k) {
    const Vec dz = z[k + 1] - z[k];
    cost += z[k].dot(cfg.Q * z[k]) + dz.dot(cfg.Q_s * dz) + v[k].dot(cfg.R_ctrl * v[k]);
  }
  const Vec e = z.back() - cfg.goal;
  return cost + e.dot(cfg.Q_f * e);
}

double tube_cost(const sls::SystemResponse& resp, const Mat& P_sqrt,
                 const Mat& Q_sqrt, const Mat& R_sqrt) {
  const int T = resp.horizon();
  double cost = 0.0;
  for (int k = 1; k < T; ++k) {
    const Mat& weight = (k == T - 1) ? P_sqrt : Q_sqrt;
    for (const Mat& blk : resp.phi_x[k]) cost += (weight * blk).squaredNorm();
    if (k < T - 1) {
      for (const Mat& blk : resp.phi_u[k]) cost += (R_sqrt * blk).squaredNorm();
    }
  }
  return cost;
}

std::vector<Vec> kmeans_representatives(const std::vector<Vec>& points, int l_reps,
                                        std::uint64_t seed) {
  require(!points.empty(), "kmeans: no points");
  require(l_reps >= 1, "kmeans: centroid budget must be at least 1");
  std::vector<Vec> distinct;
  for (const Vec& p : points) {
    require_finite(p, "kmeans point");
    bool seen = false;
    for (const Vec& d : distinct) {
      if (d.size() == p.size() && d == p) {
        seen = true;
        break;
      }
    }
    if (!seen) distinct.push_back(p);
  }
  if (static_cast<int>(distinct.size()) <= l_reps) return distinct;

  auto rng = make_rng(seed, 0);
  std::vector<int> order(distinct.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Vec> centroids(l_reps);
  for (int i = 0; i < l_reps; ++i) centroids[i] = distinct[order[i]];

  std::vector<int> assign(points.size(), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      int best = 0;
      double best_d = (points[i] - centroids[0]).squaredNorm();
      for (int c = 1; c < l_reps; ++c) {
        const double d = (points[i] - centroids[c]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Vec> sums(l_reps, Vec::Zero(points.front().size()));
    std::vector<int> counts(l_reps, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      sums[assign[i]] += points[i];
      ++counts[assign[i]];
    }
    for (int c = 0; c < l_reps; ++c) {
      if (counts[c] > 0) centroids[c] = sums[c] / counts[c];
      // An emptied cluster keeps its previous centroid.
    }
  }
  return centroids;
}

double active_cost(const std::vector<Vec>& z, const std::vector<Vec>& v,
                   const std::vector<Vec>& centroids, const Vec& goal,
                   const ActiveCostConfig& acfg) {
  (void)v;
  require(!z.empty(), "active_cost: empty trajectory");
  ActiveCostConfig shaped = acfg;
  shaped.centroids = centroids;
  check_active(shaped, static_cast<int>(z.front().size()));
  double cost = 0.0;
  for (const Vec& zk : z) cost += active_term(zk, centroids, goal, shaped).value;
  return cost;
}

Vec active_cost_gradient(const Vec& z_k, const std::vector<Vec>& centroids,
                         const Vec& goal, const ActiveCostConfig& acfg) {
  ActiveCostConfig shaped = acfg;
  shaped.centroids = centroids;
  check_active(shaped, static_cast<int>(z_k.size()));
  const ActiveTerm term = active_term(z_k, centroids, goal, shaped);
  return term.value * term.grad_h;
}

Plan initial_plan(const Vec& x0, const MpcConfig& cfg) {
  require(x0.size() == cfg.goal.size(), "initial_plan: state dimension");
  require_finite(x0, "initial_plan x0");
  Plan plan;
  plan.nominal.x.resize(cfg.T);
  if (cfg.T == 1) {
    plan.nominal.x[0] = x0;
    return plan;
  }
  for (int k = 0; k < cfg.T; ++k) {
    const double t = static_cast<double>(k) / (cfg.T - 1);
    plan.nominal.x[k] = (1.0 - t) * x0 + t * cfg.goal;
  }
  plan.nominal.u.assign(cfg.T - 1, cfg.rest_control);
  return plan;
}

Plan shift_plan(const Plan& plan) {
  require(!plan.nominal.x.empty(), "shift_plan: empty plan");
  Plan out;
  out.nominal.x.assign(plan.nominal.x.begin() + 1, plan.nominal.x.end());
  out.nominal.x.push_back(plan.nominal.x.back());
  if (!plan.nominal.u.empty()) {
    out.nominal.u.assign(plan.nominal.u.begin() + 1, plan.nominal.u.end());
    out.nominal.u.push_back(plan.nominal.u.back());
  }
  return out;
}

Plan solve_plan(const Vec& x0, const Plan& prev, const MpcConfig& cfg,
                const std::vector<sls::ConstraintSpec>& constraints,
                const LearnedModels& models, const conformal::ErrorSet& set) {
  const int T = cfg.T;
  require(T >= 2, "solve_plan: horizon needs at least one control");
  const int nx = static_cast<int>(x0.size());
  const int nu = static_cast<int>(cfg.R_ctrl.rows());
  cfg.validate(nx, nu);
  require_finite(x0, "solve_plan x0");
  require(static_cast<int>(prev.nominal.u.size()) == T - 1,
          "solve_plan: previous plan horizon mismatch");
  if (cfg.mode != Mode::Vmpc) {
    require(set.count() > 0, "solve_plan: empty calibration set");
  }

  require(static_cast<int>(prev.nominal.x.size()) == T,
          "solve_plan: previous plan state count mismatch");

  // Linearize around the carried nominal exactly as given. It may be
  // dynamically infeasible (the straight-line initialization, or a shifted
  // plan whose head has drifted from the measurement): the per-step defects
  // f_hat(z_k, v_k) - z_{k+1} enter the subproblem equalities, and x0 - z_0
  // is folded in as the pinned first state update, so a single QP step can
  // absorb both.
  const std::vector<Vec>& v = prev.nominal.u;
  const std::vector<Vec>& z = prev.nominal.x;

  sls::LtvModel ltv;
  ltv.A.reserve(T - 1);
  ltv.B.reserve(T - 1);
  ltv.E.reserve(T - 1);
  std::vector<double> quants(T - 1, 0.0);
  bool degraded = false;

  double ball_q = 0.0;
  if (cfg.mode == Mode::CpBall) {
    const auto q = conformal::ball_variant(set, z[0], v[0], cfg.alpha_k);
    if (q.infinite) {
      ball_q = conformal::max_finite_score(set, Mat::Identity(nx, nx), z[0], v[0]);
      degraded = true;
    } else {
      ball_q = q.value;
    }
  }
  for (int k = 0; k < T - 1; ++k) {
    const auto lin = sls::linearize(models.mean, z[k], v[k]);
    ltv.A.push_back(lin.A);
    ltv.B.push_back(lin.B);
    switch (cfg.mode) {
      case Mode::Vmpc:
        ltv.E.push_back(Mat::Zero(nx, nx));
        break;
      case Mode::CpBall:
        ltv.E.push_back(ball_q * Mat::Identity(nx, nx));
        quants[k] = ball_q;
        break;
      case Mode::CpEllipsoid: {
        const auto cov =
            models::cov_forward(models.cov, z[k], v[k], models.tau, models.diag_floor);
        const auto q = conformal::calibrate(set, cov.L, z[k], v[k], cfg.alpha_k);
        double radius = q.value;
        if (q.infinite) {
          radius = conformal::max_finite_score(set, cov.L, z[k], v[k]);
          degraded = true;
        }
        ltv.E.push_back(radius * cov.L);
        quants[k] = radius;
        break;
      }
    }
  }

  const Mat tube_P = cfg.tube_P_sqrt * cfg.tube_P_sqrt;
  const Mat tube_Q = cfg.tube_Q_sqrt * cfg.tube_Q_sqrt;
  const Mat tube_R = cfg.tube_R_sqrt * cfg.tube_R_sqrt;
  sls::SystemResponse resp = sls::riccati_phi(ltv, tube_P, tube_Q, tube_R);
  sls::Trajectory nominal{z, v};
  sls::Tube tube = sls::tube_extents(resp, nominal);

  // Quadratic expansion of the nominal cost over the stacked update
  // w = (dz_1..dz_{T-1}, dv_0..dv_{T-2}); dz_0 is pinned to zero by the
  // re-roll, so its terms are constant.
  const int dim = (T - 1) * (nx + nu);
  Mat H = Mat::Zero(dim, dim);
  Vec g = Vec::Zero(dim);
  const auto zi = [nx](int k) { return (k - 1) * nx; };
  const auto vi = [T, nx, nu](int k) { return (T - 1) * nx + k * nu; };
  for (int k = 1; k <= T - 2; ++k) {
    H.block(zi(k), zi(k), nx, nx) += 2.0 * cfg.Q;
    g.segment(zi(k), nx) += 2.0 * cfg.Q * z[k];
  }
  for (int k = 0; k <= T - 2; ++k) {
    const Vec delta = z[k + 1] - z[k];
    H.block(zi(k + 1), zi(k + 1), nx, nx) += 2.0 * cfg.Q_s;
    g.segment(zi(k + 1), nx) += 2.0 * cfg.Q_s * delta;
    if (k >= 1) {
      H.block(zi(k), zi(k), nx, nx) += 2.0 * cfg.Q_s;
      H.block(zi(k), zi(k + 1), nx, nx) -= 2.0 * cfg.Q_s;
      H.block(zi(k + 1), zi(k), nx, nx) -= 2.0 * cfg.Q_s;
      g.segment(zi(k), nx) -= 2.0 * cfg.Q_s * delta;
    }
    H.block(vi(k), vi(k), nu, nu) += 2.0 * cfg.R_ctrl;
    g.segment(vi(k), nu) += 2.0 * cfg.R_ctrl * v[k];
  }
  H.block(zi(T - 1), zi(T - 1), nx, nx) += 2.0 * cfg.Q_f;
  g.segment(zi(T - 1), nx) += 2.0 * cfg.Q_f * (z[T - 1] - cfg.goal);
  if (cfg.active.enabled) {
    for (int k = 1; k <= T - 1; ++k) {
      const ActiveTerm term =
          active_term(z[k], cfg.active.centroids, cfg.goal, cfg.active);
      // Gauss-Newton curvature of weight * e^h: value * grad_h grad_h'.
      H.block(zi(k), zi(k), nx, nx) +=
          cfg.active.weight * term.value * (term.grad_h * term.grad_h.transpose());
      g.segment(zi(k), nx) += cfg.active.weight * term.value * term.grad_h;
    }
  }

  std::vector<Vec> fhat(T - 1);
  for (int k = 0; k < T - 1; ++k) fhat[k] = predict(models, z[k], v[k]);

  const auto attempt = [&](double radius) {
    return sls::scp_subproblem(nominal, ltv, resp, constraints, {H, g}, x0, fhat,
                               radius, cfg.qp);
  };
  const auto objective_of = [&cfg](const sls::Trajectory& traj) {
    double J = lqr_cost(traj.x, traj.u, cfg);
    if (cfg.active.enabled) {
      J += cfg.active.weight * active_cost(traj.x, traj.u, cfg.active.centroids,
                                           cfg.goal, cfg.active);
    }
    return J;
  };
  // Project an accepted update back onto the learned dynamics: the QP's dz is
  // the first-order state change; re-rolling the updated controls from the
  // measured state realizes it exactly.
  const auto realized = [&](const sls::ScpResult& r) {
    sls::Trajectory traj;
    traj.u = v;
    for (int k = 0; k < T - 1; ++k) traj.u[k] += r.dv[k];
    traj.x.assign(static_cast<std::size_t>(T), Vec());
    rolled_state(models, traj.u, x0, traj.x);
    return traj;
  };

  // Absorbing the initialization's defects (or a large disturbance) can need
  // state updates beyond the configured radius, so an infeasible subproblem
  // is retried with a widened trust region before giving up; a step that
  // raises the realized cost of an optimal carried plan is retried with a
  // narrowed one, keeping the best candidate.
  double radius = cfg.trust_radius;
  sls::ScpResult res = attempt(radius);
  for (int grow = 0;
       grow < kTrustGrowSteps && res.status == sls::ScpStatus::Infeasible;
       ++grow) {
    radius *= 2.0;
    res = attempt(radius);
  }

  Plan out;
  out.response = std::move(resp);
  out.tube = std::move(tube);
  out.quantiles = std::move(quants);
  out.degraded = degraded;
  out.status = res.status;
  if (res.status == sls::ScpStatus::Optimal) {
    sls::Trajectory cand = realized(res);
    double J = objective_of(cand);
    if (prev.status == sls::ScpStatus::Optimal) {
      const double J_prev = objective_of(prev.nominal);
      for (int shrink = 0; shrink < kTrustShrinkSteps && J > J_prev; ++shrink) {
        radius *= 0.5;
        const sls::ScpResult narrowed = attempt(radius);
        if (narrowed.status != sls::ScpStatus::Optimal) break;
        sls::Trajectory tightened = realized(narrowed);
        const double J_tight = objective_of(tightened);
        if (J_tight >= J) break;
        J = J_tight;
        cand = std::move(tightened);
      }
    }
    out.nominal = std::move(cand);
    out.objective = J;
  } else {
    // Subproblem failed: the caller keeps the carried plan unchanged.
    out.nominal = prev.nominal;
    out.objective = objective_of(prev.nominal);
  }
  return out;
}

RunLog run_mpc(const Task& task, const MpcConfig& cfg, const LearnedModels& models,
               conformal::ErrorSet& set, std::uint64_t seed) {
  const int nx = static_cast<int>(task.start.size());
  const int nu = static_cast<int>(cfg.R_ctrl.rows());
  cfg.validate(nx, nu);
  require(cfg.T >= 2, "run_mpc: horizon needs at least one control");
  require(static_cast<bool>(task.true_step), "run_mpc: missing plant");
  require_finite(task.start, "run_mpc start");

  const auto goal_distance = [&cfg](const Vec& s) {
    double sq = 0.0;
    for (int d : cfg.goal_dims) sq += (s(d) - cfg.goal(d)) * (s(d) - cfg.goal(d));
    return std::sqrt(sq);
  };

  RunLog log;
  log.seed = seed;
  Vec x = task.start;
  log.final_state = x;
  if (goal_distance(x) <= cfg.goal_radius) {
    log.status = RunStatus::ReachedGoal;
    return log;
  }

  Plan plan = initial_plan(x, cfg);
  if (task.initial_states) {
    plan.nominal.x = task.initial_states(x);
    require(static_cast<int>(plan.nominal.x.size()) == cfg.T,
            "run_mpc: initial-states hook returned wrong horizon");
  }
  for (int w = 0; w < cfg.warmup_iters; ++w) {
    plan = solve_plan(x, plan, cfg, task.constraints, models, set);
    ++log.solves;
  }

  bool reached = false;
  for (int t = 0; t < cfg.max_steps; ++t) {
    if (goal_distance(x) <= cfg.goal_radius) {
      reached = true;
      break;
    }
    const auto t0 = std::chrono::steady_clock::now();
    plan = solve_plan(x, plan, cfg, task.constraints, models, set);
    const auto t1 = std::chrono::steady_clock::now();
    ++log.solves;

    const Vec u = plan.nominal.u.front();
    const Vec x_next = task.true_step(x, u);
    require_finite(x_next, "run_mpc: plant output");
    const Vec residual = x_next - predict(models, x, u);

    StepRecord rec;
    rec.x = x;
    rec.u = u;
    rec.solve_seconds = std::chrono::duration<double>(t1 - t0).count();
    rec.prediction_error = residual.norm();
    rec.quantile = plan.quantiles.empty() ? 0.0 : plan.quantiles.front();
    rec.degraded = plan.degraded;

    // Coverage margin of the realized one-step error, evaluated before the
    // observation joins the calibration set.
    if (cfg.mode == Mode::Vmpc) {
      rec.margin = std::numeric_limits<double>::quiet_NaN();
    } else {
      Mat shape = Mat::Identity(nx, nx);
      conformal::QuantileResult q;
      if (cfg.mode == Mode::CpBall) {
        q = conformal::ball_variant(set, x, u, cfg.alpha_k);
      } else {
        shape = models::cov_forward(models.cov, x, u, models.tau, models.diag_floor).L;
        q = conformal::calibrate(set, shape, x, u, cfg.alpha_k);
      }
      if (q.infinite) {
        rec.margin = -std::numeric_limits<double>::infinity();
        rec.degraded = true;
      } else {
        rec.margin = conformal::score(shape, residual) - q.value;
      }
    }

    double clearance = std::numeric_limits<double>::infinity();
    for (const Vec& c : task.obstacle_centers) {
      double sq = 0.0;
      for (std::size_t i = 0; i < cfg.goal_dims.size(); ++i) {
        const double diff = x(cfg.goal_dims[i]) - c(static_cast<Eigen::Index>(i));
        sq += diff * diff;
      }
      clearance = std::min(clearance, std::sqrt(sq));
    }
    rec.min_obstacle_distance = clearance;

    double log_vol = 0.0;
    for (const Vec& ext : plan.tube.state_extent) {
      for (Eigen::Index i = 0; i < ext.size(); ++i) {
        log_vol += std::log(ext(i) + 1e-9);
      }
    }
    rec.tube_log_volume = log_vol;
    log.steps.push_back(std::move(rec));

    conformal::online_update(set, x, u, x_next, models.mean);
    x = x_next;
    log.final_state = x;
    plan = shift_plan(plan);
  }
  if (!reached && goal_distance(x) <= cfg.goal_radius) reached = true;
  log.status = reached ? RunStatus::ReachedGoal : RunStatus::MaxSteps;
  return log;
}

}  // namespace cpsls::mpc
