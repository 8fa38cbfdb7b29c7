#include "cpsls/scenario.hpp"

#include <cmath>
#include <stdexcept>

namespace cpsls::scenario {
namespace {

double draw(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> ud(lo, hi);
  return ud(rng);
}

// One-sided halfspace row c_x' x + b <= 0 acting on a single state dimension.
sls::ConstraintSpec axis_bound(int nx, int dim, double sign, double b,
                               std::string name) {
  Vec c_x = Vec::Zero(nx);
  c_x(dim) = sign;
  return sls::linear_constraint(c_x, Vec::Zero(2), b, std::move(name));
}

std::vector<sls::ConstraintSpec> car_box_constraints() {
  std::vector<sls::ConstraintSpec> out;
  out.push_back(axis_bound(4, 0, 1.0, -5.0, "p_x <= 5"));
  out.push_back(axis_bound(4, 0, -1.0, 0.0, "p_x >= 0"));
  out.push_back(axis_bound(4, 1, 1.0, -5.0, "p_y <= 5"));
  out.push_back(axis_bound(4, 1, -1.0, -5.0, "p_y >= -5"));
  return out;
}

ScenarioSetup car_base(dynamics::ScenarioTag tag) {
  ScenarioSetup s;
  s.true_dyn = {dynamics::ScenarioVariant::preset(tag), 0.1};
  s.mpc = mpc::MpcConfig::car_defaults();
  s.mpc.goal_radius = 0.3;
  s.constraints = car_box_constraints();
  Vec center(2);
  center << 2.5, 0.0;
  s.obstacle_centers = {center};
  return s;
}

// West-edge starts, east-edge goals; the direct route passes the disk.
void east_west_task(ScenarioSetup& s) {
  s.sample_start = [](std::mt19937_64& rng) {
    Vec x(4);
    x << draw(rng, 0.3, 0.8), draw(rng, -0.8, 0.8), draw(rng, -0.3, 0.3), 0.0;
    return x;
  };
  s.sample_goal = [](std::mt19937_64& rng) {
    Vec g = Vec::Zero(4);
    g(0) = draw(rng, 4.2, 4.7);
    g(1) = draw(rng, -0.8, 0.8);
    return g;
  };
}

ScenarioSetup make_quad() {
  ScenarioSetup s;
  s.true_dyn = {dynamics::ScenarioVariant::preset(dynamics::ScenarioTag::QuadFall),
                0.05};
  s.mpc = mpc::MpcConfig::quad_defaults();
  s.mpc.goal_radius = 0.3;
  s.tau = 0.5;  // blend the covariance toward identity to cut conservativeness
  Vec center(3);
  center << 2.5, 2.5, 2.5;
  s.obstacle_centers = {center};
  s.obstacle_radius = 0.8;
  const int nx = 12;
  Vec zero_u = Vec::Zero(4);
  for (int d = 0; d < 3; ++d) {
    Vec hi = Vec::Zero(nx), lo = Vec::Zero(nx);
    hi(d) = 1.0;
    lo(d) = -1.0;
    s.constraints.push_back(
        sls::linear_constraint(hi, zero_u, -5.0, "p" + std::to_string(d) + " <= 5"));
    s.constraints.push_back(
        sls::linear_constraint(lo, zero_u, 0.0, "p" + std::to_string(d) + " >= 0"));
  }
  s.constraints.push_back(sls::keep_out_circle(center, 0.8, {0, 1, 2}, "sphere"));
  s.sample_start = [](std::mt19937_64& rng) {
    Vec x = Vec::Zero(12);
    x(0) = draw(rng, 0.4, 0.9);
    x(1) = draw(rng, 2.0, 3.0);
    x(2) = draw(rng, 2.0, 3.0);
    return x;
  };
  s.sample_goal = [](std::mt19937_64&) {
    Vec g = Vec::Zero(12);
    g(0) = 4.5;
    g(1) = 2.5;
    g(2) = 2.5;
    return g;
  };
  return s;
}

}  // namespace

ScenarioSetup make_scenario(dynamics::ScenarioTag tag) {
  switch (tag) {
    case dynamics::ScenarioTag::CarId: {
      ScenarioSetup s = car_base(tag);
      s.obstacle_radius = 1.0;
      s.constraints.push_back(
          sls::keep_out_circle(s.obstacle_centers[0], 1.0, {0, 1}, "obstacle"));
      east_west_task(s);
      return s;
    }
    case dynamics::ScenarioTag::CarOodAttract: {
      ScenarioSetup s = car_base(tag);
      s.obstacle_radius = 1.0;
      s.constraints.push_back(
          sls::keep_out_circle(s.obstacle_centers[0], 1.0, {0, 1}, "obstacle"));
      east_west_task(s);
      return s;
    }
    case dynamics::ScenarioTag::CarFriction: {
      ScenarioSetup s = car_base(tag);
      s.obstacle_radius = 1.0;
      s.constraints.push_back(
          sls::keep_out_circle(s.obstacle_centers[0], 1.0, {0, 1}, "obstacle"));
      // North-band starts facing south, south-band goals: every feasible
      // route crosses the untrained middle band near the disk.
      s.sample_start = [](std::mt19937_64& rng) {
        Vec x(4);
        x << draw(rng, 1.0, 4.0), draw(rng, 2.5, 4.5), draw(rng, -2.0, -1.1), 0.0;
        return x;
      };
      s.sample_goal = [](std::mt19937_64& rng) {
        Vec g = Vec::Zero(4);
        g(0) = draw(rng, 1.0, 4.0);
        g(1) = draw(rng, -4.5, -2.5);
        return g;
      };
      return s;
    }
    case dynamics::ScenarioTag::CarActiveRegion: {
      ScenarioSetup s = car_base(tag);
      s.obstacle_radius = 0.0;  // untrained disk: logged but traversable
      s.mpc.Q_s = 0.1 * Mat::Identity(4, 4);
      s.mpc.active.enabled = true;  // centroids are filled from data at run time
      s.sample_start = [](std::mt19937_64& rng) {
        Vec x(4);
        x << draw(rng, 0.3, 0.7), draw(rng, -0.4, 0.4), draw(rng, -0.3, 0.3), 0.0;
        return x;
      };
      s.sample_goal = [](std::mt19937_64& rng) {
        Vec g = Vec::Zero(4);
        g(0) = draw(rng, 4.3, 4.7);
        g(1) = draw(rng, -0.4, 0.4);
        return g;
      };
      return s;
    }
    case dynamics::ScenarioTag::QuadFall:
      return make_quad();
  }
  throw std::invalid_argument("make_scenario: unknown scenario tag");
}

mpc::Task make_task(const ScenarioSetup& setup, mpc::MpcConfig& cfg,
                    std::uint64_t trial_seed) {
  if (!setup.sample_start || !setup.sample_goal)
    throw std::invalid_argument("make_task: scenario lacks start/goal samplers");
  auto rng = make_rng(trial_seed, 7);
  mpc::Task task;
  task.start = setup.sample_start(rng);
  cfg.goal = setup.sample_goal(rng);
  task.constraints = setup.constraints;
  task.obstacle_centers = setup.obstacle_centers;
  const dynamics::DiscreteDynamics dyn = setup.true_dyn;
  task.true_step = [dyn](const Vec& x, const Vec& u) {
    return dynamics::euler_step(dyn, {x, u});
  };

  // Initial nominal: straight position path to the goal with the heading /
  // velocity coordinates following the path, so the very first linearization
  // is controllable in every position coordinate (a resting interpolation
  // leaves the car's lateral motion out of reach of the tube feedback).
  const int T = cfg.T;
  const Vec goal = cfg.goal;
  const double dt = dyn.dt;
  if (setup.true_dyn.variant.tag == dynamics::ScenarioTag::QuadFall) {
    task.initial_states = [T, goal, dt](const Vec& x0) {
      std::vector<Vec> xs(static_cast<std::size_t>(T));
      xs[0] = x0;
      const Eigen::Vector3d p0 = x0.head<3>();
      const Eigen::Vector3d diff = Eigen::Vector3d(goal.head<3>()) - p0;
      const Eigen::Vector3d rate =
          T > 1 ? Eigen::Vector3d(diff / ((T - 1) * dt)) : Eigen::Vector3d::Zero();
      for (int k = 1; k < T; ++k) {
        const double t = static_cast<double>(k) / (T - 1);
        Vec s = Vec::Zero(12);
        s.head<3>() = p0 + t * diff;
        s.segment<3>(6) = rate;
        xs[static_cast<std::size_t>(k)] = s;
      }
      return xs;
    };
  } else {
    task.initial_states = [T, goal, dt](const Vec& x0) {
      std::vector<Vec> xs(static_cast<std::size_t>(T));
      xs[0] = x0;
      const Eigen::Vector2d p0 = x0.head<2>();
      const Eigen::Vector2d diff = Eigen::Vector2d(goal.head<2>()) - p0;
      const double dist = diff.norm();
      const double heading = dist > 1e-9 ? std::atan2(diff.y(), diff.x()) : x0(2);
      const double speed = T > 1 ? dist / ((T - 1) * dt) : 0.0;
      for (int k = 1; k < T; ++k) {
        const double t = static_cast<double>(k) / (T - 1);
        Vec s(4);
        s.head<2>() = p0 + t * diff;
        s(2) = heading;
        s(3) = speed;
        xs[static_cast<std::size_t>(k)] = s;
      }
      return xs;
    };
  }
  return task;
}

}  // namespace cpsls::scenario
