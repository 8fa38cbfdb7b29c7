#pragma once

#include "cpsls/common.hpp"

namespace cpsls::dynamics {

/// Benchmark scenarios. The car variants share the Dubins base model and
/// differ in an additive modification that is active only inside a region of
/// the state space; the quadcopter has a spherical "falling" region.
enum class ScenarioTag {
  CarId,            ///< unmodified Dubins car
  CarOodAttract,    ///< attractive steering active for |p_y| < band
  CarActiveRegion,  ///< steering + velocity dip inside a disk
  CarFriction,      ///< velocity friction everywhere, slip + steering in a band
  QuadFall,         ///< 12-state quadcopter with a downward-pull shell
};

struct QuadParams {
  double gravity{-9.81};  ///< signed: world z accelerates at +gravity
  double mass{1.0};
  double ix{0.5};
  double iy{0.1};
  double iz{0.3};
};

/// Scenario parameters. `preset` fills the published values; individual
/// fields may be overridden through the config file.
struct ScenarioVariant {
  ScenarioTag tag{ScenarioTag::CarId};

  // Car modifications.
  double k_attr{0.0};       ///< steering gain; negative values attract
  double attract_band{0.0}; ///< half-width of the |p_y| gate (0 = disk gate)
  Eigen::Vector2d region_center{2.5, 0.0};
  double region_radius{1.0};

  // Quadcopter.
  QuadParams quad{};
  Eigen::Vector3d fall_center{2.5, 2.5, 2.5};
  double fall_radius{1.0};

  [[nodiscard]] static ScenarioVariant preset(ScenarioTag tag);
};

/// Euler-discretized scenario dynamics.
struct DiscreteDynamics {
  ScenarioVariant variant{};
  double dt{0.1};
};

[[nodiscard]] int state_dim(ScenarioTag tag);
[[nodiscard]] int control_dim(ScenarioTag tag);
[[nodiscard]] bool is_car(ScenarioTag tag);
[[nodiscard]] ScenarioTag tag_from_string(const std::string& name);
[[nodiscard]] std::string to_string(ScenarioTag tag);

/// Continuous-time Dubins car field, state (p_x, p_y, theta, v), control
/// (omega, a), plus the variant's modification. Throws on non-finite input
/// or wrong dimensions. The attractive-steering term returns zero within
/// 1e-12 of the region center so the field stays finite everywhere.
[[nodiscard]] Vec car_field(const Vec& x, const Vec& u, const ScenarioVariant& variant);

/// Continuous-time quadcopter field, state
/// (p_x, p_y, p_z, psi, theta, phi, vx, vy, vz, p, q, r), control
/// (thrust, torque_x, torque_y, torque_z). Throws std::domain_error when
/// |cos(theta)| < 1e-6 (Euler-angle singularity).
[[nodiscard]] Vec quad_field(const Vec& x, const Vec& u, const ScenarioVariant& variant);

/// Dispatches to car_field / quad_field based on the variant tag.
[[nodiscard]] Vec field(const Vec& x, const Vec& u, const ScenarioVariant& variant);

/// One explicit-Euler step x + dt * field(x, u). Throws if dt <= 0.
[[nodiscard]] Vec euler_step(const DiscreteDynamics& dyn, const StateControlPoint& pt);

}  // namespace cpsls::dynamics
