#include "cpsls/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cpsls::metrics {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MeanStd {
  double mean{kNaN};
  double std{kNaN};
};

MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size() - 1))};
}

std::string cell(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

TrialMetrics compute_metrics(const mpc::RunLog& log, double obstacle_radius) {
  if (obstacle_radius < 0.0)
    throw std::invalid_argument("compute_metrics: negative obstacle radius");
  TrialMetrics m;
  m.steps = static_cast<int>(log.steps.size());
  m.reached_goal = log.status == mpc::RunStatus::ReachedGoal;
  m.min_obstacle_distance = std::numeric_limits<double>::infinity();

  std::vector<double> times_ms, errors;
  int with_margin = 0, covered = 0;
  for (const auto& rec : log.steps) {
    times_ms.push_back(rec.solve_seconds * 1e3);
    errors.push_back(rec.prediction_error);
    m.min_obstacle_distance = std::min(m.min_obstacle_distance, rec.min_obstacle_distance);
    if (obstacle_radius > 0.0 && rec.min_obstacle_distance < obstacle_radius)
      m.collided = true;
    if (!std::isnan(rec.margin)) {
      ++with_margin;
      if (rec.margin <= 0.0) ++covered;
    }
  }
  const MeanStd t = mean_std(times_ms);
  const MeanStd e = mean_std(errors);
  m.mean_step_ms = t.mean;
  m.std_step_ms = t.std;
  m.mean_pred_error = e.mean;
  m.std_pred_error = e.std;
  m.coverage = with_margin > 0
                   ? static_cast<double>(covered) / static_cast<double>(with_margin)
                   : kNaN;
  m.success = m.reached_goal && !m.collided;
  return m;
}

MetricsSummary summarize(const std::vector<mpc::RunLog>& logs,
                         double obstacle_radius) {
  MetricsSummary s;
  s.trials = static_cast<int>(logs.size());
  std::vector<double> times_ms, errors, min_dists, coverages;
  for (const auto& log : logs) {
    s.per_trial.push_back(compute_metrics(log, obstacle_radius));
    const TrialMetrics& m = s.per_trial.back();
    if (m.success) ++s.success_count;
    if (m.collided) ++s.collision_count;
    if (std::isfinite(m.min_obstacle_distance)) min_dists.push_back(m.min_obstacle_distance);
    if (!std::isnan(m.coverage)) coverages.push_back(m.coverage);
    for (const auto& rec : log.steps) {
      times_ms.push_back(rec.solve_seconds * 1e3);
      errors.push_back(rec.prediction_error);
    }
  }
  const MeanStd t = mean_std(times_ms);
  const MeanStd e = mean_std(errors);
  s.mean_step_ms = t.mean;
  s.std_step_ms = t.std;
  s.mean_pred_error = e.mean;
  s.std_pred_error = e.std;
  s.mean_min_obstacle_distance = mean_std(min_dists).mean;
  s.mean_coverage = mean_std(coverages).mean;
  return s;
}

void write_summary_csv(const MetricsSummary& summary, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "trial,steps,mean_step_ms,std_step_ms,mean_pred_error,std_pred_error,"
         "min_obstacle_distance,coverage,reached_goal,collided,success\n";
  for (std::size_t i = 0; i < summary.per_trial.size(); ++i) {
    const TrialMetrics& m = summary.per_trial[i];
    out << i << ',' << m.steps << ',' << cell(m.mean_step_ms) << ','
        << cell(m.std_step_ms) << ',' << cell(m.mean_pred_error) << ','
        << cell(m.std_pred_error) << ',' << cell(m.min_obstacle_distance) << ','
        << cell(m.coverage) << ',' << (m.reached_goal ? 1 : 0) << ','
        << (m.collided ? 1 : 0) << ',' << (m.success ? 1 : 0) << '\n';
  }
  out << "all," << summary.trials << ',' << cell(summary.mean_step_ms) << ','
      << cell(summary.std_step_ms) << ',' << cell(summary.mean_pred_error) << ','
      << cell(summary.std_pred_error) << ','
      << cell(summary.mean_min_obstacle_distance) << ','
      << cell(summary.mean_coverage) << ',' << summary.success_count << ','
      << summary.collision_count << ',' << summary.success_count << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace cpsls::metrics
