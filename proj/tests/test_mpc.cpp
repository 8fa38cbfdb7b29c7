#include "cpsls/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"

using namespace cpsls;

namespace {

// Near-linear learned model: tanh units driven at scale delta and undone on
// the output, so fhat(x, u) = A x + B u to within O(delta^2).
mpc::LearnedModels linear_models(const Mat& A, const Mat& B, std::uint64_t seed) {
  const int nx = static_cast<int>(A.rows());
  const int nu = static_cast<int>(B.cols());
  const double delta = 1e-5;
  models::MlpParams mean;
  mean.W1.resize(nx, nx + nu);
  mean.W1 << A, B;
  mean.W1 *= delta;
  mean.b1 = Vec::Zero(nx);
  mean.W2 = Mat::Identity(nx, nx) / delta;
  mean.b2 = Vec::Zero(nx);
  mpc::LearnedModels m;
  m.mean = mean;
  m.cov = models::random_init(nx + nu, 6, nx * (nx + 1) / 2, seed, 1.0);
  m.tau = 0.0;  // blend off: identity error shape everywhere
  return m;
}

conformal::ErrorSet zero_residual_set(int nx, int nu, int n, double rho,
                                      std::uint64_t seed) {
  conformal::ErrorSet set;
  set.rho = rho;
  auto rng = make_rng(seed, 3);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (int i = 0; i < n; ++i) {
    Vec x(nx), u(nu);
    for (int j = 0; j < nx; ++j) x(j) = ud(rng);
    for (int j = 0; j < nu; ++j) u(j) = ud(rng);
    set.append({x, u, Vec::Zero(nx)});
  }
  return set;
}

struct LqrSolution {
  std::vector<Vec> z;
  std::vector<Vec> v;
};

// Terminal-target LQR: stage costs z'Qz + v'Rv for the first T-1 states and
// controls, terminal (z - goal)'Qf(z - goal). Affine Riccati recursion.
LqrSolution lqr_oracle(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                       const Mat& Qf, const Vec& goal, const Vec& x0, int T) {
  std::vector<Mat> P(T);
  std::vector<Vec> p(T);
  P[T - 1] = Qf;
  p[T - 1] = -Qf * goal;
  std::vector<Mat> K(T - 1);
  std::vector<Vec> d(T - 1);
  for (int k = T - 2; k >= 0; --k) {
    const Mat S = R + B.transpose() * P[k + 1] * B;
    Eigen::LLT<Mat> llt(S);
    K[k] = -llt.solve(B.transpose() * P[k + 1] * A);
    d[k] = -llt.solve(B.transpose() * p[k + 1]);
    const Mat acl = A + B * K[k];
    P[k] = Q + A.transpose() * P[k + 1] * acl;
    P[k] = 0.5 * (P[k] + P[k].transpose());
    p[k] = acl.transpose() * p[k + 1];
  }
  LqrSolution sol;
  sol.z.resize(T);
  sol.v.resize(T - 1);
  sol.z[0] = x0;
  for (int k = 0; k < T - 1; ++k) {
    sol.v[k] = K[k] * sol.z[k] + d[k];
    sol.z[k + 1] = A * sol.z[k] + B * sol.v[k];
  }
  return sol;
}

mpc::MpcConfig small_config(const Mat& Q, const Mat& R, const Mat& Qf,
                            const Vec& goal, int T) {
  mpc::MpcConfig cfg;
  const int nx = static_cast<int>(Q.rows());
  const int nu = static_cast<int>(R.rows());
  cfg.T = T;
  cfg.mode = mpc::Mode::CpEllipsoid;
  cfg.rho = 1.0;
  cfg.Q = Q;
  cfg.Q_s = Mat::Zero(nx, nx);
  cfg.R_ctrl = R;
  cfg.Q_f = Qf;
  cfg.tube_P_sqrt = Mat::Identity(nx, nx);
  cfg.tube_Q_sqrt = Mat::Identity(nx, nx);
  cfg.tube_R_sqrt = Mat::Identity(nu, nu);
  cfg.goal = goal;
  cfg.goal_dims.resize(nx);
  for (int i = 0; i < nx; ++i) cfg.goal_dims[i] = i;
  cfg.rest_control = Vec::Zero(nu);
  cfg.trust_radius = 1e3;
  return cfg;
}

double worst_defect(const mpc::Plan& plan, const mpc::LearnedModels& m) {
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < plan.nominal.x.size(); ++k) {
    const Vec pred = mpc::predict(m, plan.nominal.x[k], plan.nominal.u[k]);
    worst = std::max(worst,
                     (plan.nominal.x[k + 1] - pred).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

}  // namespace

TEST_CASE("nominal trajectory cost") {
  const int nx = 2, nu = 1;
  mpc::MpcConfig cfg;
  cfg.Q = Mat::Zero(nx, nx);
  cfg.Q_s = Mat::Zero(nx, nx);
  cfg.R_ctrl = Mat::Identity(nu, nu);
  Vec qf(nx);
  qf << 2.0, 3.0;
  cfg.Q_f = qf.asDiagonal();
  cfg.goal = Vec(nx);
  cfg.goal << 1.0, 2.0;

  SUBCASE("resting trajectory pays only the terminal goal distance") {
    std::vector<Vec> z(3, Vec::Zero(nx)), v(2, Vec::Zero(nu));
    CHECK(mpc::lqr_cost(z, v, cfg) == doctest::Approx(2.0 + 3.0 * 4.0).epsilon(1e-14));
  }
  SUBCASE("pure control penalty") {
    cfg.Q_f = Mat::Zero(nx, nx);
    std::vector<Vec> z(2, Vec::Zero(nx)), v(1, Vec::Zero(nu));
    v[0](0) = 1.0;
    CHECK(mpc::lqr_cost(z, v, cfg) == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("car defaults vanish on a resting goal trajectory") {
    auto car = mpc::MpcConfig::car_defaults();
    car.goal << 3.0, 1.0, 0.5, 2.0;
    std::vector<Vec> z(5);
    auto rng = make_rng(40, 0);
    std::uniform_real_distribution<double> ud(-2.0, 2.0);
    for (auto& zk : z) {
      zk = Vec(4);
      for (int i = 0; i < 4; ++i) zk(i) = ud(rng);  // stage states are free (Q = 0)
    }
    z.back() = car.goal;
    std::vector<Vec> v(4, Vec::Zero(2));
    CHECK(mpc::lqr_cost(z, v, car) == doctest::Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("difference penalty sees state increments") {
    cfg.Q_s = 2.0 * Mat::Identity(nx, nx);
    cfg.Q_f = Mat::Zero(nx, nx);
    std::vector<Vec> z(3, Vec::Zero(nx)), v(2, Vec::Zero(nu));
    z[1] << 1.0, 0.0;  // increments (1,0) then (-1,0)
    CHECK(mpc::lqr_cost(z, v, cfg) == doctest::Approx(4.0).epsilon(1e-14));
  }
  SUBCASE("horizon mismatch is rejected") {
    std::vector<Vec> z(3, Vec::Zero(nx)), v(3, Vec::Zero(nu));
    CHECK_THROWS_AS((void)mpc::lqr_cost(z, v, cfg), std::invalid_argument);
  }
}

TEST_CASE("tube volume surrogate") {
  const int nx = 2, nu = 1, T = 3;
  sls::SystemResponse resp;
  resp.phi_x.assign(T, {});
  resp.phi_u.assign(T, {});
  for (int k = 1; k < T; ++k) {
    resp.phi_x[k].assign(k, Mat::Zero(nx, nx));
    resp.phi_u[k].assign(k, Mat::Zero(nu, nx));
  }
  const Mat P = 2.0 * Mat::Identity(nx, nx);
  const Mat Q = Mat::Identity(nx, nx);
  const Mat R = 3.0 * Mat::Identity(nu, nu);

  SUBCASE("zero response costs nothing") {
    CHECK(mpc::tube_cost(resp, P, Q, R) == 0.0);
  }
  SUBCASE("intermediate state block weighted by Q") {
    resp.phi_x[1][0] = Mat::Identity(nx, nx);
    CHECK(mpc::tube_cost(resp, P, Q, R) == doctest::Approx(2.0).epsilon(1e-14));
  }
  SUBCASE("terminal state block weighted by P") {
    resp.phi_x[2][0] = Mat::Identity(nx, nx);
    CHECK(mpc::tube_cost(resp, P, Q, R) == doctest::Approx(8.0).epsilon(1e-14));
  }
  SUBCASE("applied control blocks weighted by R, terminal row excluded") {
    resp.phi_u[1][0] << 1.0, 1.0;  // applied-control deviation row
    CHECK(mpc::tube_cost(resp, P, Q, R) == doctest::Approx(9.0 * 2.0).epsilon(1e-12));
    resp.phi_u[2][0] << 5.0, 5.0;  // terminal row shapes tightening only
    CHECK(mpc::tube_cost(resp, P, Q, R) == doctest::Approx(9.0 * 2.0).epsilon(1e-12));
  }
  SUBCASE("quadratic in the response scale") {
    auto rng = make_rng(41, 0);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    sls::SystemResponse big = resp;
    for (int k = 1; k < T; ++k) {
      for (int j = 0; j < k; ++j) {
        for (int r = 0; r < nx; ++r)
          for (int c = 0; c < nx; ++c) resp.phi_x[k][j](r, c) = ud(rng);
        for (int c = 0; c < nx; ++c) resp.phi_u[k][j](0, c) = ud(rng);
        big.phi_x[k][j] = 2.0 * resp.phi_x[k][j];
        big.phi_u[k][j] = 2.0 * resp.phi_u[k][j];
      }
    }
    const double base = mpc::tube_cost(resp, P, Q, R);
    CHECK(base > 0.0);
    CHECK(mpc::tube_cost(big, P, Q, R) == doctest::Approx(4.0 * base).epsilon(1e-12));
  }
}

TEST_CASE("representative point selection") {
  SUBCASE("identical points collapse to one centroid") {
    std::vector<Vec> pts(17, Vec::Constant(2, 1.5));
    auto reps = mpc::kmeans_representatives(pts, 5, 3);
    REQUIRE(reps.size() == 1);
    CHECK((reps[0] - pts[0]).norm() == 0.0);
  }
  SUBCASE("budget at least the distinct count returns the points") {
    std::vector<Vec> pts;
    for (int i = 0; i < 4; ++i) pts.push_back(Vec::Constant(2, double(i)));
    pts.push_back(pts[1]);  // duplicate
    auto reps = mpc::kmeans_representatives(pts, 10, 3);
    REQUIRE(reps.size() == 4);
    for (int i = 0; i < 4; ++i) {
      bool found = false;
      for (const Vec& r : reps) found = found || (r - pts[i]).norm() == 0.0;
      CHECK(found);
    }
  }
  SUBCASE("two separated clusters produce the cluster means") {
    auto rng = make_rng(42, 0);
    std::normal_distribution<double> nd(0.0, 0.1);
    std::vector<Vec> pts;
    Vec mean_a = Vec::Zero(2), mean_b = Vec::Zero(2);
    for (int i = 0; i < 40; ++i) {
      Vec a(2), b(2);
      a << nd(rng), nd(rng);
      b << 10.0 + nd(rng), 10.0 + nd(rng);
      mean_a += a;
      mean_b += b;
      pts.push_back(a);
      pts.push_back(b);
    }
    mean_a /= 40.0;
    mean_b /= 40.0;
    auto reps = mpc::kmeans_representatives(pts, 2, 7);
    REQUIRE(reps.size() == 2);
    if (reps[0](0) > reps[1](0)) std::swap(reps[0], reps[1]);
    CHECK((reps[0] - mean_a).norm() < 1e-3);
    CHECK((reps[1] - mean_b).norm() < 1e-3);
  }
  SUBCASE("seeded determinism") {
    auto rng = make_rng(43, 0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<Vec> pts;
    for (int i = 0; i < 60; ++i) {
      Vec p(2);
      p << ud(rng), ud(rng);
      pts.push_back(p);
    }
    auto a = mpc::kmeans_representatives(pts, 8, 11);
    auto b = mpc::kmeans_representatives(pts, 8, 11);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).norm() == 0.0);
  }
  SUBCASE("invalid inputs are rejected") {
    CHECK_THROWS_AS((void)mpc::kmeans_representatives({}, 3, 0), std::invalid_argument);
    std::vector<Vec> pts(3, Vec::Zero(2));
    CHECK_THROWS_AS((void)mpc::kmeans_representatives(pts, 0, 0), std::invalid_argument);
  }
}

TEST_CASE("data proximity cost") {
  mpc::ActiveCostConfig acfg;
  acfg.enabled = true;
  acfg.beta = 3.0;
  acfg.pos_dims = {0, 1};
  acfg.vel_dim = 3;

  SUBCASE("far from every kernel each step saturates at one") {
    acfg.goal_count = 200.0;
    std::vector<Vec> centroids = {Vec::Zero(2), Vec::Constant(2, 0.3)};
    Vec goal = Vec::Zero(4);
    std::vector<Vec> z(4, Vec::Constant(4, 1e6));
    CHECK(mpc::active_cost(z, {}, centroids, goal, acfg) ==
          doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("sitting on the only centroid with no goal kernel") {
    acfg.goal_count = 0.0;
    acfg.beta = 1e6;
    Vec c(2);
    c << 1.0, 2.0;
    Vec goal = Vec::Zero(4);
    std::vector<Vec> z(3, Vec::Zero(4));
    for (auto& zk : z) {
      zk(0) = 1.0;
      zk(1) = 2.0;
      zk(3) = -4.0;  // velocity plays no role without the goal kernel
    }
    CHECK(mpc::active_cost(z, {}, {c}, goal, acfg) ==
          doctest::Approx(3.0 * std::exp(-1.0)).epsilon(1e-12));
  }
  SUBCASE("more goal mass strictly lowers the cost at the goal") {
    Vec goal(4);
    goal << 0.5, -0.5, 0.0, 1.0;
    std::vector<Vec> z(3, goal);
    std::vector<Vec> centroids = {Vec::Constant(2, 4.0)};
    acfg.goal_count = 200.0;
    const double base = mpc::active_cost(z, {}, centroids, goal, acfg);
    acfg.goal_count = 400.0;
    CHECK(mpc::active_cost(z, {}, centroids, goal, acfg) < base);
  }
  SUBCASE("analytic gradient matches central differences") {
    auto rng = make_rng(44, 0);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    acfg.beta = 1.7;
    acfg.goal_count = 2.5;
    std::vector<Vec> centroids;
    for (int i = 0; i < 4; ++i) {
      Vec c(2);
      c << ud(rng), ud(rng);
      centroids.push_back(c);
    }
    Vec goal(4), z(4);
    for (int i = 0; i < 4; ++i) {
      goal(i) = ud(rng);
      z(i) = ud(rng);
    }
    const Vec grad = mpc::active_cost_gradient(z, centroids, goal, acfg);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
      Vec zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      const double fd = (mpc::active_cost({zp}, {}, centroids, goal, acfg) -
                         mpc::active_cost({zm}, {}, centroids, goal, acfg)) /
                        (2.0 * h);
      CHECK(std::abs(grad(i) - fd) < 1e-7);
    }
  }
  SUBCASE("invalid parameters are rejected") {
    acfg.beta = 0.0;
    CHECK_THROWS_AS((void)mpc::active_cost({Vec::Zero(4)}, {}, {Vec::Zero(2)},
                                           Vec::Zero(4), acfg),
                    std::invalid_argument);
    acfg.beta = 1.0;
    acfg.goal_count = 0.0;
    CHECK_THROWS_AS((void)mpc::active_cost({Vec::Zero(4)}, {}, {}, Vec::Zero(4), acfg),
                    std::invalid_argument);
  }
}

TEST_CASE("plan bookkeeping helpers") {
  Mat A = Mat::Identity(2, 2), B = Mat::Identity(2, 2);
  auto cfg = small_config(0.1 * Mat::Identity(2, 2), Mat::Identity(2, 2),
                          Mat::Identity(2, 2), Vec::Zero(2), 4);
  Vec x0(2);
  x0 << 2.0, -1.0;

  SUBCASE("initial plan interpolates states and rests the controls") {
    cfg.goal << 1.0, 3.0;
    auto plan = mpc::initial_plan(x0, cfg);
    REQUIRE(plan.nominal.x.size() == 4);
    REQUIRE(plan.nominal.u.size() == 3);
    CHECK((plan.nominal.x.front() - x0).norm() == 0.0);
    CHECK((plan.nominal.x.back() - cfg.goal).norm() == 0.0);
    const Vec mid = x0 + (1.0 / 3.0) * (cfg.goal - x0);
    CHECK((plan.nominal.x[1] - mid).norm() < 1e-12);
    for (const Vec& u : plan.nominal.u) CHECK(u.norm() == 0.0);
  }
  SUBCASE("shift drops the head and duplicates the tail") {
    auto plan = mpc::initial_plan(x0, cfg);
    plan.nominal.u[0] << 5.0, 5.0;
    auto shifted = mpc::shift_plan(plan);
    REQUIRE(shifted.nominal.x.size() == 4);
    CHECK((shifted.nominal.x[0] - plan.nominal.x[1]).norm() == 0.0);
    CHECK((shifted.nominal.x[3] - plan.nominal.x[3]).norm() == 0.0);
    CHECK((shifted.nominal.u[0] - plan.nominal.u[1]).norm() == 0.0);
    CHECK((shifted.nominal.u[2] - plan.nominal.u[2]).norm() == 0.0);
  }
  SUBCASE("configuration validation rejects bad shapes and signs") {
    auto bad = cfg;
    bad.alpha_k = 1.5;
    CHECK_THROWS_AS(bad.validate(2, 2), std::invalid_argument);
    bad = cfg;
    bad.R_ctrl = Mat::Zero(2, 2);  // merely PSD
    CHECK_THROWS_AS(bad.validate(2, 2), std::invalid_argument);
    bad = cfg;
    bad.Q_f(0, 1) = 0.3;  // asymmetric
    CHECK_THROWS_AS(bad.validate(2, 2), std::invalid_argument);
    bad = cfg;
    bad.goal = Vec::Zero(5);
    CHECK_THROWS_AS(bad.validate(2, 2), std::invalid_argument);
    CHECK_NOTHROW(cfg.validate(2, 2));
  }
  SUBCASE("mode names round-trip") {
    for (auto m : {mpc::Mode::CpEllipsoid, mpc::Mode::CpBall, mpc::Mode::Vmpc}) {
      CHECK(mpc::mode_from_string(mpc::to_string(m)) == m);
    }
    CHECK_THROWS_AS((void)mpc::mode_from_string("banana"), std::invalid_argument);
  }
}

TEST_CASE("single solve on a near-linear system") {
  const int T = 8;
  Mat A(2, 2), B(2, 1);
  A << 0.9, 0.2, -0.1, 0.8;
  B << 0.1, 0.5;
  const Mat Q = 0.1 * Mat::Identity(2, 2);
  const Mat R = Mat::Identity(1, 1);
  const Mat Qf = Mat::Identity(2, 2);
  Vec goal(2);
  goal << 1.0, -0.5;
  Vec x0(2);
  x0 << -0.4, 0.7;

  auto models = linear_models(A, B, 50);
  auto set = zero_residual_set(2, 1, 200, 1.0, 50);
  auto cfg = small_config(Q, R, Qf, goal, T);

  SUBCASE("matches the analytic LQR solution with zero tubes") {
    auto plan = mpc::solve_plan(x0, mpc::initial_plan(x0, cfg), cfg, {}, models, set);
    REQUIRE(plan.status == sls::ScpStatus::Optimal);
    CHECK_FALSE(plan.degraded);
    const auto oracle = lqr_oracle(A, B, Q, R, Qf, goal, x0, T);
    for (int k = 0; k < T - 1; ++k) {
      CHECK((plan.nominal.u[k] - oracle.v[k]).norm() < 1e-6);
      CHECK((plan.nominal.x[k + 1] - oracle.z[k + 1]).norm() < 1e-6);
      CHECK(plan.quantiles[k] == 0.0);
    }
    for (const Vec& ext : plan.tube.state_extent) CHECK(ext.norm() < 1e-9);
    CHECK(worst_defect(plan, models) < 1e-9);

    // Independent local-optimality probe: random control perturbations of the
    // returned plan may not lower the rolled-out nominal cost.
    auto rng = make_rng(51, 0);
    std::normal_distribution<double> nd(0.0, 1.0);
    const double base = plan.objective;
    for (int rep = 0; rep < 30; ++rep) {
      auto v = plan.nominal.u;
      for (auto& vk : v) vk(0) += 1e-3 * nd(rng);
      std::vector<Vec> z(T);
      z[0] = x0;
      for (int k = 0; k < T - 1; ++k) z[k + 1] = mpc::predict(models, z[k], v[k]);
      CHECK(mpc::lqr_cost(z, v, cfg) >= base - 1e-9);
    }
  }
  SUBCASE("ball and ellipsoid flavors coincide under an identity error shape") {
    auto ell = mpc::solve_plan(x0, mpc::initial_plan(x0, cfg), cfg, {}, models, set);
    auto ball_cfg = cfg;
    ball_cfg.mode = mpc::Mode::CpBall;
    auto ball =
        mpc::solve_plan(x0, mpc::initial_plan(x0, cfg), ball_cfg, {}, models, set);
    REQUIRE(ell.status == sls::ScpStatus::Optimal);
    REQUIRE(ball.status == sls::ScpStatus::Optimal);
    for (int k = 0; k < T - 1; ++k) {
      CHECK((ell.nominal.u[k] - ball.nominal.u[k]).norm() <= 1e-14);
      CHECK(ell.quantiles[k] == ball.quantiles[k]);
    }
  }
  SUBCASE("nominal-model flavor plans with an all-zero response") {
    auto vcfg = cfg;
    vcfg.mode = mpc::Mode::Vmpc;
    conformal::ErrorSet empty;  // the nominal flavor never calibrates
    auto plan =
        mpc::solve_plan(x0, mpc::initial_plan(x0, cfg), vcfg, {}, models, empty);
    REQUIRE(plan.status == sls::ScpStatus::Optimal);
    for (const auto& row : plan.response.phi_x) {
      for (const Mat& blk : row) CHECK(blk.norm() == 0.0);
    }
    for (const Vec& ext : plan.tube.state_extent) CHECK(ext.norm() == 0.0);
    for (double q : plan.quantiles) CHECK(q == 0.0);
    const auto oracle = lqr_oracle(A, B, Q, R, Qf, goal, x0, T);
    for (int k = 0; k < T - 1; ++k) {
      CHECK((plan.nominal.u[k] - oracle.v[k]).norm() < 1e-6);
    }
  }
  SUBCASE("contradictory constraints return the carried plan flagged infeasible") {
    Vec cx(2), cu(1);
    cx << 1.0, 0.0;
    cu << 0.0;
    std::vector<sls::ConstraintSpec> bad;
    bad.push_back(sls::linear_constraint(cx, cu, 1e3, "x0 <= -1000"));
    bad.push_back(sls::linear_constraint(-cx, cu, 1e3, "x0 >= 1000"));
    auto prev = mpc::initial_plan(x0, cfg);
    auto plan = mpc::solve_plan(x0, prev, cfg, bad, models, set);
    CHECK(plan.status == sls::ScpStatus::Infeasible);
    // The carried plan comes back untouched: same controls, same states.
    for (int k = 0; k < T - 1; ++k) {
      CHECK((plan.nominal.u[k] - prev.nominal.u[k]).norm() == 0.0);
    }
    for (int k = 0; k < T; ++k) {
      CHECK((plan.nominal.x[k] - prev.nominal.x[k]).norm() == 0.0);
    }
  }
}

TEST_CASE("data pull steers the closed loop toward the calibration points") {
  // Single-step integrator: positions are the whole state, so the controller
  // can reach the goal in one horizon, and any detour is purely the pull of
  // the data-proximity term.
  const Mat A = Mat::Identity(2, 2);
  const Mat B = Mat::Identity(2, 2);
  auto models = linear_models(A, B, 52);
  Vec x0(2), goal(2);
  x0 << 1.0, 1.0;
  goal << 0.0, 0.0;
  auto cfg = small_config(0.01 * Mat::Identity(2, 2), Mat::Identity(2, 2),
                          10.0 * Mat::Identity(2, 2), goal, 8);
  cfg.trust_radius = 0.25;
  cfg.goal_radius = 0.12;
  cfg.max_steps = 50;

  Vec hub(2);
  hub << 0.8, 0.2;  // off the straight descent path
  std::vector<Vec> centroids;
  auto rng = make_rng(53, 0);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (int i = 0; i < 5; ++i) {
    Vec c = hub;
    c(0) += nd(rng);
    c(1) += nd(rng);
    centroids.push_back(c);
  }

  mpc::Task task;
  task.true_step = [&models](const Vec& x, const Vec& u) {
    return mpc::predict(models, x, u);
  };
  task.start = x0;

  auto run = [&](bool enabled) {
    auto c = cfg;
    c.active.enabled = enabled;
    c.active.centroids = centroids;
    c.active.beta = 1.5;
    c.active.goal_count = 5.0;
    c.active.weight = 8.0;
    c.active.pos_dims = {0, 1};
    c.active.vel_dim = -1;  // no velocity coordinate in this state
    auto set = zero_residual_set(2, 2, 200, 1.0, 52);
    auto log = mpc::run_mpc(task, c, models, set, 13);
    double closest = (log.final_state - hub).norm();
    for (const auto& rec : log.steps) closest = std::min(closest, (rec.x - hub).norm());
    return std::pair{closest, log.status};
  };

  const auto [with_pull, status_with] = run(true);
  const auto [without_pull, status_without] = run(false);
  // Without the pull the loop descends straight to the goal; with it the
  // executed path bends toward the data hub, trading goal progress for
  // proximity to previously seen states.
  CHECK(status_without == mpc::RunStatus::ReachedGoal);
  CHECK(without_pull > 0.4);
  CHECK(with_pull < without_pull - 0.1);
  CHECK(with_pull < 0.3);
}

TEST_CASE("closed-loop receding-horizon run") {
  Mat A(2, 2), B(2, 1);
  A << 0.9, 0.2, -0.1, 0.8;
  B << 0.1, 0.5;
  auto models = linear_models(A, B, 54);
  auto cfg = small_config(0.1 * Mat::Identity(2, 2), 0.2 * Mat::Identity(1, 1),
                          10.0 * Mat::Identity(2, 2), Vec::Zero(2), 8);
  cfg.goal_radius = 0.05;
  cfg.max_steps = 80;

  mpc::Task task;
  task.true_step = [&models](const Vec& x, const Vec& u) {
    return mpc::predict(models, x, u);  // plant equals the learned model
  };
  task.start = Vec(2);
  task.start << 1.2, 0.4;
  Vec obstacle(2);
  obstacle << -1.0, -1.0;
  task.obstacle_centers = {obstacle};

  SUBCASE("starting inside the goal ball executes nothing") {
    auto at_goal = task;
    at_goal.start = Vec::Zero(2);
    auto set = zero_residual_set(2, 1, 200, 1.0, 54);
    auto log = mpc::run_mpc(at_goal, cfg, models, set, 1);
    CHECK(log.steps.empty());
    CHECK(log.status == mpc::RunStatus::ReachedGoal);
    CHECK(log.solves == 0);
    CHECK(set.count() == 200);
  }
  SUBCASE("drives to the goal and appends one residual per executed step") {
    auto set = zero_residual_set(2, 1, 200, 1.0, 54);
    const int before = set.count();
    auto log = mpc::run_mpc(task, cfg, models, set, 7);
    CHECK(log.status == mpc::RunStatus::ReachedGoal);
    REQUIRE(!log.steps.empty());
    CHECK(set.count() == before + static_cast<int>(log.steps.size()));
    CHECK(log.solves == cfg.warmup_iters + static_cast<int>(log.steps.size()));
    CHECK((log.final_state - cfg.goal).norm() <= cfg.goal_radius + 1e-12);
    CHECK(log.seed == 7);
    for (const auto& rec : log.steps) {
      CHECK(rec.prediction_error < 1e-9);        // exact plant
      CHECK(rec.margin <= 1e-12);                // zero residuals stay covered
      CHECK_FALSE(rec.degraded);
      CHECK(rec.solve_seconds >= 0.0);
      CHECK(std::isfinite(rec.min_obstacle_distance));
      CHECK(rec.min_obstacle_distance > 1.0);    // obstacle far away
    }
  }
  SUBCASE("sparse calibration data degrades gracefully") {
    auto set = zero_residual_set(2, 1, 3, 0.5, 55);
    auto log = mpc::run_mpc(task, cfg, models, set, 9);
    CHECK(log.status == mpc::RunStatus::ReachedGoal);
    REQUIRE(!log.steps.empty());
    // Three points cannot reach the 1 - 0.1/15 level: every solve falls back
    // to the largest finite score and flags the weakened coverage.
    CHECK(log.steps.front().degraded);
    CHECK(log.steps.front().margin == -std::numeric_limits<double>::infinity());
  }
  SUBCASE("nominal-model flavor leaves the margin undefined") {
    auto vcfg = cfg;
    vcfg.mode = mpc::Mode::Vmpc;
    conformal::ErrorSet empty;
    auto log = mpc::run_mpc(task, vcfg, models, empty, 11);
    CHECK(log.status == mpc::RunStatus::ReachedGoal);
    REQUIRE(!log.steps.empty());
    for (const auto& rec : log.steps) {
      CHECK(std::isnan(rec.margin));
      CHECK(rec.quantile == 0.0);
    }
    CHECK(empty.count() == static_cast<int>(log.steps.size()));
  }
}
