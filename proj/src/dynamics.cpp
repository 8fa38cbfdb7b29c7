#include "cpsls/dynamics.hpp"

#include <cmath>
#include <numbers>

namespace cpsls::dynamics {
namespace {

constexpr double kSingularD2 = 1e-12;

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Attractive-steering rate k / (d^2 + offset) * wrap(theta_a - theta).
/// The decay distance d is measured from the region center, while the
/// reference angle theta_a = atan2(p_y, p_x) is measured from the origin.
/// Returns 0 when offset == 0 and the point sits on the region center, so
/// the 1/d^2 form stays finite.
double attract_rate(double px, double py, double theta, double k,
                    double denom_offset, const Eigen::Vector2d& center) {
  const double dx = px - center.x();
  const double dy = py - center.y();
  const double d2 = dx * dx + dy * dy;
  if (denom_offset == 0.0 && d2 < kSingularD2) return 0.0;
  const double theta_a = std::atan2(py, px);
  const double dth = std::atan2(std::sin(theta_a - theta), std::cos(theta_a - theta));
  return k / (d2 + denom_offset) * dth;
}

}  // namespace

ScenarioVariant ScenarioVariant::preset(ScenarioTag tag) {
  ScenarioVariant v;
  v.tag = tag;
  switch (tag) {
    case ScenarioTag::CarId:
      break;
    case ScenarioTag::CarOodAttract:
      v.k_attr = -0.5;
      v.attract_band = 6.0;
      break;
    case ScenarioTag::CarActiveRegion:
      v.k_attr = -0.5;
      v.region_radius = 1.0;
      break;
    case ScenarioTag::CarFriction:
      v.k_attr = -1.5;
      v.attract_band = 2.0;
      break;
    case ScenarioTag::QuadFall:
      v.fall_radius = 1.0;
      break;
  }
  return v;
}

int state_dim(ScenarioTag tag) { return is_car(tag) ? 4 : 12; }
int control_dim(ScenarioTag tag) { return is_car(tag) ? 2 : 4; }
bool is_car(ScenarioTag tag) { return tag != ScenarioTag::QuadFall; }

ScenarioTag tag_from_string(const std::string& name) {
  if (name == "car-id") return ScenarioTag::CarId;
  if (name == "car-ood-attract") return ScenarioTag::CarOodAttract;
  if (name == "car-active-region") return ScenarioTag::CarActiveRegion;
  if (name == "car-friction") return ScenarioTag::CarFriction;
  if (name == "quad-fall") return ScenarioTag::QuadFall;
  throw std::invalid_argument("unknown scenario: " + name);
}

std::string to_string(ScenarioTag tag) {
  switch (tag) {
    case ScenarioTag::CarId: return "car-id";
    case ScenarioTag::CarOodAttract: return "car-ood-attract";
    case ScenarioTag::CarActiveRegion: return "car-active-region";
    case ScenarioTag::CarFriction: return "car-friction";
    case ScenarioTag::QuadFall: return "quad-fall";
  }
  return "unknown";
}

Vec car_field(const Vec& x, const Vec& u, const ScenarioVariant& variant) {
  if (x.size() != 4 || u.size() != 2) {
    throw std::invalid_argument("car_field: expected 4 states, 2 controls");
  }
  require_finite(x, "car_field state");
  require_finite(u, "car_field control");

  const double px = x(0), py = x(1), theta = x(2), v = x(3);
  const double omega = u(0), accel = u(1);

  Vec dx(4);
  dx << v * std::cos(theta), v * std::sin(theta), omega, accel;

  switch (variant.tag) {
    case ScenarioTag::CarId:
      break;
    case ScenarioTag::CarOodAttract:
      if (std::abs(py) < variant.attract_band) {
        dx(2) += attract_rate(px, py, theta, variant.k_attr, 0.0, variant.region_center);
      }
      break;
    case ScenarioTag::CarActiveRegion: {
      const Eigen::Vector2d d = Eigen::Vector2d(px, py) - variant.region_center;
      const double d2 = d.squaredNorm();
      if (d2 < variant.region_radius * variant.region_radius) {
        dx(2) += attract_rate(px, py, theta, variant.k_attr, 0.1, variant.region_center);
        dx(3) += -(1.0 + std::cos(std::numbers::pi * std::sqrt(d2)));
      }
      break;
    }
    case ScenarioTag::CarFriction: {
      const bool in_band = std::abs(py) < variant.attract_band;
      if (in_band) {
        dx(2) += attract_rate(px, py, theta, variant.k_attr, 0.0, variant.region_center);
      }
      const double slip = in_band ? 0.7 * std::exp(-2.0 * py * py) : 0.0;
      const double drag = 0.1 * std::cos(2.0 * std::numbers::pi / 5.0 * py) + 0.1;
      dx(3) = accel - sign0(v) * (drag - slip);
      break;
    }
    case ScenarioTag::QuadFall:
      throw std::invalid_argument("car_field: quad scenario");
  }
  return dx;
}

Vec quad_field(const Vec& x, const Vec& u, const ScenarioVariant& variant) {
  if (x.size() != 12 || u.size() != 4) {
    throw std::invalid_argument("quad_field: expected 12 states, 4 controls");
  }
  require_finite(x, "quad_field state");
  require_finite(u, "quad_field control");

  const QuadParams& qp = variant.quad;
  const double psi = x(3), theta = x(4), phi = x(5);
  const double vx = x(6), vy = x(7), vz = x(8);
  const double p = x(9), q = x(10), r = x(11);
  const double u1 = u(0);

  const double ct = std::cos(theta);
  if (std::abs(ct) < 1e-6) {
    throw std::domain_error("quad_field: pitch at Euler-angle singularity");
  }
  const double st = std::sin(theta), tt = std::tan(theta);
  const double cphi = std::cos(phi), sphi = std::sin(phi);
  const double cpsi = std::cos(psi), spsi = std::sin(psi);

  const double d2 = (x.head<3>() - variant.fall_center).squaredNorm();
  const double a_fall =
      d2 < variant.fall_radius * variant.fall_radius
          ? 0.1 + 0.1 * std::cos(2.0 * std::numbers::pi * d2 - std::numbers::pi)
          : 0.0;

  Vec dx(12);
  dx(0) = vx;
  dx(1) = vy;
  dx(2) = vz;
  dx(3) = q * sphi / ct + r * cphi / ct;
  dx(4) = q * cphi - r * sphi;
  dx(5) = p + q * sphi * tt + r * cphi * tt;
  dx(6) = u1 / qp.mass * (sphi * spsi + cphi * cpsi * st);
  dx(7) = u1 / qp.mass * (cpsi * sphi - cphi * spsi * st);
  dx(8) = qp.gravity + u1 / qp.mass * (cphi * ct) - a_fall;
  dx(9) = (qp.iy - qp.iz) / qp.ix * q * r + u(1) / qp.ix;
  dx(10) = (qp.iz - qp.ix) / qp.iy * p * r + u(2) / qp.iy;
  dx(11) = (qp.ix - qp.iy) / qp.iz * p * q + u(3) / qp.iz;
  return dx;
}

Vec field(const Vec& x, const Vec& u, const ScenarioVariant& variant) {
  return is_car(variant.tag) ? car_field(x, u, variant) : quad_field(x, u, variant);
}

Vec euler_step(const DiscreteDynamics& dyn, const StateControlPoint& pt) {
  if (!(dyn.dt > 0.0)) {
    throw std::invalid_argument("euler_step: dt must be positive");
  }
  return pt.x + dyn.dt * field(pt.x, pt.u, dyn.variant);
}

}  // namespace cpsls::dynamics
