#include "cpsls/sampling.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace cpsls::sampling {
namespace {

constexpr double kMinAcceptRate = 1e-3;
constexpr int kRateCheckAfter = 1000;

void check_counts(int train, int uncertainty, int calibration) {
  if (train <= 0 || uncertainty <= 0 || calibration <= 0)
    throw std::invalid_argument("sampling: split counts must be positive");
}

Vec draw_box(const std::vector<Interval>& ranges, std::mt19937_64& rng) {
  Vec out(ranges.size());
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    std::uniform_real_distribution<double> ud(ranges[i].lo, ranges[i].hi);
    out(static_cast<Eigen::Index>(i)) = ud(rng);
  }
  return out;
}

io::SampleSet fill_split(const SamplingSpec& spec,
                         const dynamics::DiscreteDynamics& true_dyn, int count,
                         std::uint64_t stream) {
  auto rng = make_rng(spec.seed, stream);
  io::SampleSet set;
  const int n_x = static_cast<int>(spec.state_ranges.size());
  const int n_u = static_cast<int>(spec.control_ranges.size());
  set.states.resize(n_x, count);
  set.controls.resize(n_u, count);
  set.next_states.resize(n_x, count);
  long attempts = 0;
  int accepted = 0;
  while (accepted < count) {
    const Vec x = draw_box(spec.state_ranges, rng);
    const Vec u = draw_box(spec.control_ranges, rng);
    ++attempts;
    if (spec.include && !spec.include(x)) {
      if (attempts >= kRateCheckAfter &&
          static_cast<double>(accepted + 1) < kMinAcceptRate * static_cast<double>(attempts)) {
        throw std::runtime_error(
            "sample_dataset: acceptance rate below 1e-3 (" +
            std::to_string(accepted) + "/" + std::to_string(attempts) +
            " accepted); check the exclusion predicates against the box");
      }
      continue;
    }
    set.states.col(accepted) = x;
    set.controls.col(accepted) = u;
    set.next_states.col(accepted) = dynamics::euler_step(true_dyn, {x, u});
    ++accepted;
  }
  return set;
}

bool quad_state_in_bounds(const Vec& x) {
  for (int i = 0; i < 3; ++i) {
    if (x(i) < 0.0 || x(i) > 5.0) return false;
  }
  const double shell = (x(0) - 2.5) * (x(0) - 2.5) + (x(1) - 2.5) * (x(1) - 2.5) +
                       (x(2) - 2.5) * (x(2) - 2.5);
  if (shell <= 1.0) return false;
  for (int i = 3; i < 6; ++i) {
    if (std::abs(x(i)) > std::numbers::pi / 4.0) return false;
  }
  for (int i = 6; i < 9; ++i) {
    if (std::abs(x(i)) > 5.0) return false;
  }
  for (int i = 9; i < 12; ++i) {
    if (std::abs(x(i)) > 2.0) return false;
  }
  return true;
}

Vec draw_quad_initial(std::mt19937_64& rng) {
  Vec x(12);
  std::uniform_real_distribution<double> pos(0.0, 5.0);
  std::uniform_real_distribution<double> ang(-std::numbers::pi / 4.0,
                                             std::numbers::pi / 4.0);
  std::uniform_real_distribution<double> vel(-5.0, 5.0);
  std::uniform_real_distribution<double> rate(-2.0, 2.0);
  while (true) {
    for (int i = 0; i < 3; ++i) x(i) = pos(rng);
    if ((x.head<3>() - Vec::Constant(3, 2.5)).squaredNorm() <= 1.0) continue;
    break;
  }
  for (int i = 3; i < 6; ++i) x(i) = ang(rng);
  for (int i = 6; i < 9; ++i) x(i) = vel(rng);
  for (int i = 9; i < 12; ++i) x(i) = rate(rng);
  return x;
}

io::SampleSet fill_quad_split(const QuadDataSpec& spec,
                              const dynamics::DiscreteDynamics& true_dyn, int count,
                              std::uint64_t stream) {
  auto rng = make_rng(spec.seed, stream);
  const double hover = -true_dyn.variant.quad.gravity * true_dyn.variant.quad.mass;
  const double lo = std::max(0.0, hover * (1.0 - spec.thrust_jitter));
  const double hi = std::min(2.0 * hover, hover * (1.0 + spec.thrust_jitter));
  std::uniform_real_distribution<double> thrust(lo, hi);
  std::uniform_real_distribution<double> torque(-0.1, 0.1);

  io::SampleSet set;
  set.states.resize(12, count);
  set.controls.resize(4, count);
  set.next_states.resize(12, count);
  int accepted = 0;
  int trajectories = 0;
  while (accepted < count) {
    if (++trajectories > spec.max_trajectories) {
      throw std::runtime_error(
          "quad_trajectory_data: only " + std::to_string(accepted) + "/" +
          std::to_string(count) + " pairs accepted after " +
          std::to_string(spec.max_trajectories) + " rollouts");
    }
    Vec x = draw_quad_initial(rng);
    for (int k = 0; k < spec.horizon && accepted < count; ++k) {
      Vec u(4);
      u << thrust(rng), torque(rng), torque(rng), torque(rng);
      Vec next;
      try {
        next = dynamics::euler_step(true_dyn, {x, u});
      } catch (const std::domain_error&) {
        break;  // pitch singularity: discard the rest of the rollout
      }
      if (!quad_state_in_bounds(next)) break;
      set.states.col(accepted) = x;
      set.controls.col(accepted) = u;
      set.next_states.col(accepted) = next;
      ++accepted;
      x = next;
    }
  }
  return set;
}

}  // namespace

void SamplingSpec::validate() const {
  if (state_ranges.empty() || control_ranges.empty())
    throw std::invalid_argument("SamplingSpec: empty ranges");
  for (const auto& r : state_ranges) {
    if (!(r.lo < r.hi)) throw std::invalid_argument("SamplingSpec: empty state interval");
  }
  for (const auto& r : control_ranges) {
    if (!(r.lo < r.hi))
      throw std::invalid_argument("SamplingSpec: empty control interval");
  }
  check_counts(train_count, uncertainty_count, calibration_count);
}

void QuadDataSpec::validate() const {
  check_counts(train_count, uncertainty_count, calibration_count);
  if (horizon <= 0) throw std::invalid_argument("QuadDataSpec: horizon must be positive");
  if (thrust_jitter <= 0.0 || thrust_jitter > 1.0)
    throw std::invalid_argument("QuadDataSpec: thrust jitter must lie in (0, 1]");
  if (max_trajectories <= 0)
    throw std::invalid_argument("QuadDataSpec: max_trajectories must be positive");
}

SamplingSpec car_sampling_spec(dynamics::ScenarioTag tag, std::uint64_t seed) {
  if (!dynamics::is_car(tag))
    throw std::invalid_argument("car_sampling_spec: not a car scenario");
  SamplingSpec spec;
  spec.seed = seed;
  spec.state_ranges = {{0.0, 5.0}, {-5.0, 5.0}, {-std::numbers::pi, std::numbers::pi},
                       {-10.0, 10.0}};
  spec.control_ranges = {{-10.0, 10.0}, {-10.0, 10.0}};
  switch (tag) {
    case dynamics::ScenarioTag::CarId:
      break;
    case dynamics::ScenarioTag::CarOodAttract:
      spec.state_ranges[1] = {-12.0, 12.0};
      spec.include = [](const Vec& x) {
        const double a = std::abs(x(1));
        return a >= 6.0 && a <= 12.0;
      };
      break;
    case dynamics::ScenarioTag::CarFriction:
      spec.include = [](const Vec& x) {
        const double a = std::abs(x(1));
        return a >= 2.0 && a <= 5.0;
      };
      break;
    case dynamics::ScenarioTag::CarActiveRegion:
      spec.include = [](const Vec& x) {
        const double dx = x(0) - 2.5;
        return dx * dx + x(1) * x(1) > 1.0;
      };
      break;
    default:
      throw std::invalid_argument("car_sampling_spec: unsupported scenario");
  }
  return spec;
}

SplitSet sample_dataset(const SamplingSpec& spec,
                        const dynamics::DiscreteDynamics& true_dyn) {
  spec.validate();
  const int n_x = dynamics::state_dim(true_dyn.variant.tag);
  const int n_u = dynamics::control_dim(true_dyn.variant.tag);
  if (static_cast<int>(spec.state_ranges.size()) != n_x ||
      static_cast<int>(spec.control_ranges.size()) != n_u)
    throw std::invalid_argument("sample_dataset: range dimensions do not match dynamics");
  SplitSet out;
  out.train = fill_split(spec, true_dyn, spec.train_count, 0);
  out.uncertainty = fill_split(spec, true_dyn, spec.uncertainty_count, 1);
  out.calibration = fill_split(spec, true_dyn, spec.calibration_count, 2);
  return out;
}

SplitSet quad_trajectory_data(const QuadDataSpec& spec,
                              const dynamics::DiscreteDynamics& true_dyn) {
  spec.validate();
  if (dynamics::is_car(true_dyn.variant.tag))
    throw std::invalid_argument("quad_trajectory_data: needs quadcopter dynamics");
  SplitSet out;
  out.train = fill_quad_split(spec, true_dyn, spec.train_count, 0);
  out.uncertainty = fill_quad_split(spec, true_dyn, spec.uncertainty_count, 1);
  out.calibration = fill_quad_split(spec, true_dyn, spec.calibration_count, 2);
  return out;
}

}  // namespace cpsls::sampling
