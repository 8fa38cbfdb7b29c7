#include "cpsls/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "cpsls/scenario.hpp"

namespace cpsls::experiment {
namespace {

std::string cell(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void require_file(const std::string& path, const char* what) {
  if (path.empty())
    throw std::runtime_error(std::string("run_experiment: missing ") + what + " path");
  if (!std::filesystem::exists(path))
    throw std::runtime_error(std::string("run_experiment: ") + what + " '" + path +
                             "' does not exist");
}

void write_steps_csv(const std::vector<mpc::RunLog>& logs, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "trial,step,margin,quantile,tube_log_volume,min_obstacle_distance,"
         "prediction_error,degraded\n";
  for (std::size_t t = 0; t < logs.size(); ++t) {
    for (std::size_t k = 0; k < logs[t].steps.size(); ++k) {
      const auto& rec = logs[t].steps[k];
      out << t << ',' << k << ',' << cell(rec.margin) << ',' << cell(rec.quantile)
          << ',' << cell(rec.tube_log_volume) << ','
          << cell(rec.min_obstacle_distance) << ',' << cell(rec.prediction_error)
          << ',' << (rec.degraded ? 1 : 0) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void write_logvol_hist(const std::vector<mpc::RunLog>& logs, const std::string& path) {
  std::vector<double> values;
  for (const auto& log : logs) {
    for (const auto& rec : log.steps) {
      if (std::isfinite(rec.tube_log_volume)) values.push_back(rec.tube_log_volume);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "bin_lo,bin_hi,count\n";
  if (!values.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double width = std::max(1e-12, (*hi_it - lo));
    constexpr int kBins = 20;
    std::vector<int> counts(kBins, 0);
    for (double v : values) {
      int b = static_cast<int>(std::floor((v - lo) / width * kBins));
      b = std::clamp(b, 0, kBins - 1);
      ++counts[b];
    }
    for (int b = 0; b < kBins; ++b) {
      out << cell(lo + width * b / kBins) << ',' << cell(lo + width * (b + 1) / kBins)
          << ',' << counts[b] << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace

conformal::ErrorSet build_error_set(const io::SampleSet& samples,
                                    const models::MlpParams& mean, double rho) {
  samples.validate();
  conformal::ErrorSet set;
  set.rho = rho;
  for (int i = 0; i < samples.count(); ++i) {
    const Vec x = samples.states.col(i);
    const Vec u = samples.controls.col(i);
    const Vec residual = samples.next_states.col(i) - models::mlp_forward(mean, x, u);
    set.append({x, u, residual});
  }
  return set;
}

void ExperimentConfig::validate() const {
  if (trials < 0)
    throw std::invalid_argument("ExperimentConfig: negative trial count");
  if (threads < 0)
    throw std::invalid_argument("ExperimentConfig: negative thread count");
}

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedExperiment prep;
  prep.setup = scenario::make_scenario(cfg.scenario);
  mpc::MpcConfig& mpc_cfg = prep.mpc_cfg;
  mpc_cfg = prep.setup.mpc;
  mpc_cfg.mode = cfg.mode;
  if (cfg.rho > 0.0) mpc_cfg.rho = cfg.rho;
  if (cfg.alpha_k > 0.0) mpc_cfg.alpha_k = cfg.alpha_k;
  if (cfg.max_steps > 0) mpc_cfg.max_steps = cfg.max_steps;
  if (cfg.horizon > 1) mpc_cfg.T = cfg.horizon;
  if (cfg.active == 0) mpc_cfg.active.enabled = false;
  if (cfg.active == 1) mpc_cfg.active.enabled = true;
  if (cfg.active_l_reps > 0) mpc_cfg.active.l_reps = cfg.active_l_reps;

  require_file(cfg.mean_model_path, "mean model");
  prep.models.mean = models::load_params(cfg.mean_model_path);
  if (cfg.mode == mpc::Mode::CpEllipsoid) {
    require_file(cfg.cov_model_path, "covariance model");
  }
  if (!cfg.cov_model_path.empty()) {
    require_file(cfg.cov_model_path, "covariance model");
    prep.models.cov = models::load_params(cfg.cov_model_path);
  }
  prep.models.tau = cfg.tau >= 0.0 ? cfg.tau : prep.setup.tau;

  prep.error_set.rho = mpc_cfg.rho;
  if (cfg.mode != mpc::Mode::Vmpc || mpc_cfg.active.enabled) {
    require_file(cfg.error_set_path, "error set");
    prep.error_set = conformal::load_error_set(cfg.error_set_path, mpc_cfg.rho);
  }
  if (mpc_cfg.active.enabled) {
    if (prep.error_set.count() == 0)
      throw std::runtime_error("run_experiment: active cost needs calibration data");
    std::vector<Vec> positions;
    positions.reserve(static_cast<std::size_t>(prep.error_set.count()));
    for (const auto& p : prep.error_set.points) {
      Vec pos(mpc_cfg.active.pos_dims.size());
      for (std::size_t d = 0; d < mpc_cfg.active.pos_dims.size(); ++d)
        pos(static_cast<Eigen::Index>(d)) = p.x(mpc_cfg.active.pos_dims[d]);
      positions.push_back(std::move(pos));
    }
    mpc_cfg.active.centroids = mpc::kmeans_representatives(
        positions, mpc_cfg.active.l_reps, cfg.base_seed);
  }
  return prep;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const PreparedExperiment prep = prepare_experiment(cfg);
  const scenario::ScenarioSetup& setup = prep.setup;
  const mpc::MpcConfig& mpc_cfg = prep.mpc_cfg;
  const mpc::LearnedModels& models = prep.models;
  const conformal::ErrorSet& base_set = prep.error_set;

  ExperimentResult result;
  result.logs.resize(static_cast<std::size_t>(cfg.trials));
  const int workers =
      std::max(1, std::min(cfg.trials, cfg.threads > 0
                                           ? cfg.threads
                                           : static_cast<int>(
                                                 std::thread::hardware_concurrency())));
  std::vector<std::future<void>> futures;
  futures.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&, w]() {
      for (int i = w; i < cfg.trials; i += workers) {
        const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(i);
        mpc::MpcConfig trial_cfg = mpc_cfg;
        mpc::Task task = scenario::make_task(setup, trial_cfg, seed);
        conformal::ErrorSet set = base_set;
        result.logs[static_cast<std::size_t>(i)] =
            mpc::run_mpc(task, trial_cfg, models, set, seed);
      }
    }));
  }
  for (auto& f : futures) f.get();

  for (const auto& log : result.logs) {
    if (log.status != mpc::RunStatus::ReachedGoal) result.any_unfinished = true;
  }
  result.summary = metrics::summarize(result.logs, setup.obstacle_radius);

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path dir(cfg.out_dir);
    for (std::size_t i = 0; i < result.logs.size(); ++i) {
      io::save_run_log(result.logs[i],
                       (dir / ("trial_" + std::to_string(i) + ".jsonl")).string());
    }
    metrics::write_summary_csv(result.summary, (dir / "summary.csv").string());
    write_steps_csv(result.logs, (dir / "steps.csv").string());
    write_logvol_hist(result.logs, (dir / "logvol_hist.csv").string());
  }
  return result;
}

}  // namespace cpsls::experiment
