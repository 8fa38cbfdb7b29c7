#pragma once

#include "cpsls/conformal.hpp"
#include "cpsls/dynamics.hpp"
#include "cpsls/io.hpp"
#include "cpsls/metrics.hpp"
#include "cpsls/mpc.hpp"
#include "cpsls/scenario.hpp"

#include <string>
#include <vector>

namespace cpsls::experiment {

/// Turns labeled transitions into calibration residuals against a trained
/// mean model: residual_i = y_i - mean(x_i, u_i).
[[nodiscard]] conformal::ErrorSet build_error_set(const io::SampleSet& samples,
                                                  const models::MlpParams& mean,
                                                  double rho);

/// A batch of seeded closed-loop trials for one scenario and one planner
/// flavor. Negative override fields fall back to the scenario preset.
struct ExperimentConfig {
  dynamics::ScenarioTag scenario{dynamics::ScenarioTag::CarId};
  mpc::Mode mode{mpc::Mode::CpEllipsoid};
  std::string mean_model_path;   ///< required
  std::string cov_model_path;    ///< required for cp-ellipsoid
  std::string error_set_path;    ///< required except for vmpc
  std::string out_dir;           ///< created if absent; empty = no files
  int trials{10};
  std::uint64_t base_seed{0};    ///< trial i runs with seed base_seed + i
  double tau{-1.0};              ///< covariance blend override
  double rho{-1.0};              ///< weight decay override
  double alpha_k{-1.0};          ///< per-step miscoverage override
  int max_steps{-1};
  int horizon{-1};
  int active{-1};                ///< -1 scenario default, 0 off, 1 on
  int active_l_reps{-1};         ///< k-means budget override
  int threads{0};                ///< 0 = hardware concurrency

  void validate() const;
};

struct ExperimentResult {
  std::vector<mpc::RunLog> logs;
  metrics::MetricsSummary summary;
  bool any_unfinished{false};  ///< some trial timed out or went infeasible
};

/// Everything a single trial needs, with config overrides and the active-cost
/// centroids already applied. Exposed so callers can run one-off solves (for
/// example, a plan dump) against exactly the artifacts an experiment would use.
struct PreparedExperiment {
  scenario::ScenarioSetup setup;
  mpc::MpcConfig mpc_cfg;
  mpc::LearnedModels models;
  conformal::ErrorSet error_set;
};

/// Loads the model and calibration artifacts referenced by the config and
/// resolves every override against the scenario preset. Throws
/// std::runtime_error when a required artifact is missing or malformed.
[[nodiscard]] PreparedExperiment prepare_experiment(const ExperimentConfig& cfg);

/// Loads the referenced artifacts, samples per-trial tasks, runs the trials
/// concurrently (each fully determined by its own seed), and writes, when
/// out_dir is set: summary.csv, trial_<i>.jsonl, steps.csv (per-step margin,
/// quantile, tube log-volume, obstacle distance, prediction error), and
/// logvol_hist.csv. Throws std::runtime_error when a referenced artifact is
/// missing or malformed.
[[nodiscard]] ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace cpsls::experiment
