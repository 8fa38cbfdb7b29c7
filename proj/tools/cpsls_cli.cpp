// Command-line front end: dataset generation, model training, conformal
// calibration, closed-loop experiment batches, the analytic-field coverage
// study, and report pretty-printing. Every flag can also be supplied through
// a plain key-value config file (flag wins; dashes become underscores).
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpsls/config.hpp"
#include "cpsls/experiment.hpp"
#include "cpsls/io.hpp"
#include "cpsls/metrics.hpp"
#include "cpsls/sampling.hpp"
#include "cpsls/scenario.hpp"
#include "cpsls/theory.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace cpsls;

namespace {

constexpr int kExitSuccess = 0;
constexpr int kExitUnfinished = 2;  ///< some trial timed out or went infeasible
constexpr int kExitBadConfig = 3;

/// Flag-over-config resolution: an explicitly passed CLI option wins, then a
/// key in the --config file, then the built-in default.
struct Overlay {
  CLI::App* sub{nullptr};
  config::Config file;

  [[nodiscard]] bool given(const std::string& flag) const {
    return sub->count(flag) > 0;
  }
  [[nodiscard]] static std::string key_of(const std::string& flag) {
    std::string key = flag.substr(flag.find_first_not_of('-'));
    std::replace(key.begin(), key.end(), '-', '_');
    return key;
  }
  [[nodiscard]] std::string str(const std::string& flag, const std::string& cli,
                                const std::string& fallback) const {
    if (given(flag)) return cli;
    return file.get_string(key_of(flag), fallback);
  }
  [[nodiscard]] int num(const std::string& flag, int cli, int fallback) const {
    if (given(flag)) return cli;
    return file.get_int(key_of(flag), fallback);
  }
  [[nodiscard]] std::uint64_t num(const std::string& flag, std::uint64_t cli,
                                  std::uint64_t fallback) const {
    if (given(flag)) return cli;
    return file.get_u64(key_of(flag), fallback);
  }
  [[nodiscard]] double num(const std::string& flag, double cli, double fallback) const {
    if (given(flag)) return cli;
    return file.get_double(key_of(flag), fallback);
  }
  [[nodiscard]] bool flag(const std::string& name, bool cli, bool fallback) const {
    if (given(name)) return cli;
    return file.get_bool(key_of(name), fallback);
  }
  [[nodiscard]] std::vector<double> list(const std::string& flag,
                                         const std::vector<double>& cli,
                                         const std::vector<double>& fallback) const {
    if (given(flag)) return cli;
    if (file.has(key_of(flag))) return file.get_doubles(key_of(flag));
    return fallback;
  }
};

Overlay make_overlay(CLI::App* sub, const std::string& config_path) {
  Overlay ov;
  ov.sub = sub;
  if (!config_path.empty()) ov.file = config::parse_file(config_path);
  return ov;
}

void require_value(const std::string& value, const char* what) {
  if (value.empty())
    throw std::invalid_argument(std::string("missing required ") + what +
                                " (flag or config key)");
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string config_path, scenario = "car-id", out_dir;
  std::uint64_t seed = 0;
  int train_count = -1, uncertainty_count = -1, calibration_count = -1;
  int horizon = 20, max_trajectories = 400000;
  double dt = -1.0, thrust_jitter = 0.3;
  bool csv = false;
};

int run_gen_data(CLI::App* sub, const GenDataArgs& a) {
  const Overlay ov = make_overlay(sub, a.config_path);
  const auto tag = dynamics::tag_from_string(ov.str("--scenario", a.scenario, "car-id"));
  const std::string out_dir = ov.str("--out-dir", a.out_dir, "");
  require_value(out_dir, "output directory");
  const std::uint64_t seed = ov.num("--seed", a.seed, std::uint64_t{0});
  const bool is_car = dynamics::is_car(tag);
  const double dt = [&] {
    const double v = ov.num("--dt", a.dt, -1.0);
    return v > 0.0 ? v : (is_car ? 0.1 : 0.05);
  }();
  dynamics::DiscreteDynamics dyn{dynamics::ScenarioVariant::preset(tag), dt};

  sampling::SplitSet splits;
  if (is_car) {
    auto spec = sampling::car_sampling_spec(tag, seed);
    spec.train_count = ov.num("--train-count", a.train_count, spec.train_count);
    spec.uncertainty_count =
        ov.num("--uncertainty-count", a.uncertainty_count, spec.uncertainty_count);
    spec.calibration_count =
        ov.num("--calibration-count", a.calibration_count, spec.calibration_count);
    splits = sampling::sample_dataset(spec, dyn);
  } else {
    sampling::QuadDataSpec spec;
    spec.seed = seed;
    spec.train_count = ov.num("--train-count", a.train_count, spec.train_count);
    spec.uncertainty_count =
        ov.num("--uncertainty-count", a.uncertainty_count, spec.uncertainty_count);
    spec.calibration_count =
        ov.num("--calibration-count", a.calibration_count, spec.calibration_count);
    spec.horizon = ov.num("--horizon", a.horizon, spec.horizon);
    spec.thrust_jitter = ov.num("--thrust-jitter", a.thrust_jitter, spec.thrust_jitter);
    spec.max_trajectories =
        ov.num("--max-trajectories", a.max_trajectories, spec.max_trajectories);
    splits = sampling::quad_trajectory_data(spec, dyn);
  }

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  const bool csv = ov.flag("--csv", a.csv, false);
  const std::pair<const char*, const io::SampleSet*> parts[] = {
      {"train", &splits.train},
      {"uncertainty", &splits.uncertainty},
      {"calibration", &splits.calibration}};
  for (const auto& [name, set] : parts) {
    io::save_samples(*set, (dir / (std::string(name) + ".bin")).string());
    if (csv) io::export_csv(*set, (dir / (std::string(name) + ".csv")).string());
    std::cout << name << ": " << set->count() << " transitions\n";
  }
  std::cout << "wrote " << dir.string() << " (scenario " << dynamics::to_string(tag)
            << ", dt " << dt << ", seed " << seed << ")\n";
  if (!is_car) {
    std::cout << "note: quadcopter pairs come from randomized near-hover rollouts "
                 "(horizon " << ov.num("--horizon", a.horizon, 20)
              << "), not optimizer-generated trajectories\n";
  }
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config_path, data, out, kind = "mean", mean, init, save_raw;
  int hidden = 64, epochs = 100, batch = 64;
  double lr = -1.0, tau = 1.0, w1_scale = 0.1;
  std::uint64_t seed = 0;
  bool no_standardize = false, raw_targets = false;
};

int run_train(CLI::App* sub, const TrainArgs& a) {
  const Overlay ov = make_overlay(sub, a.config_path);
  const std::string data_path = ov.str("--data", a.data, "");
  const std::string out_path = ov.str("--out", a.out, "");
  const std::string kind = ov.str("--kind", a.kind, "mean");
  require_value(data_path, "--data");
  require_value(out_path, "--out");
  if (kind != "mean" && kind != "cov")
    throw std::invalid_argument("--kind must be 'mean' or 'cov'");

  const auto samples = io::load_samples(data_path);
  const int n_x = samples.n_x();
  const int n_u = samples.n_u();
  // Fitting one-step deltas and folding the identity back in afterwards is
  // much better conditioned than fitting the raw next state.
  const bool delta = kind == "mean" && !ov.flag("--raw-targets", a.raw_targets, false);

  models::Dataset data;
  data.inputs.resize(n_x + n_u, samples.count());
  data.inputs << samples.states, samples.controls;

  int n_out = n_x;
  auto loss = models::LossKind::Mse;
  if (kind == "mean") {
    data.targets = delta ? Mat(samples.next_states - samples.states)
                         : samples.next_states;
  } else {
    const std::string mean_path = ov.str("--mean", a.mean, "");
    require_value(mean_path, "--mean (residual targets need the mean model)");
    const auto mean = models::load_params(mean_path);
    data.targets.resize(n_x, samples.count());
    for (int i = 0; i < samples.count(); ++i) {
      data.targets.col(i) =
          samples.next_states.col(i) -
          models::mlp_forward(mean, samples.states.col(i), samples.controls.col(i));
    }
    n_out = n_x * (n_x + 1) / 2;
    loss = models::LossKind::Mgnll;
  }

  models::TrainConfig tc;
  tc.lr = ov.num("--lr", a.lr, kind == "mean" ? 1e-2 : 1e-5);
  tc.epochs = ov.num("--epochs", a.epochs, 100);
  tc.batch = ov.num("--batch", a.batch, 64);
  tc.seed = ov.num("--seed", a.seed, std::uint64_t{0});
  tc.tau = ov.num("--tau", a.tau, 1.0);
  tc.standardize = !ov.flag("--no-standardize", a.no_standardize, false);
  const int hidden = ov.num("--hidden", a.hidden, 64);
  const double w1_scale = ov.num("--w1-scale", a.w1_scale, 0.1);

  const std::string init_path = ov.str("--init", a.init, "");
  auto start = init_path.empty()
                   ? models::random_init(n_x + n_u, hidden, n_out, tc.seed, w1_scale)
                   : models::load_params(init_path);
  models::TrainReport report;
  const auto fitted = models::train(std::move(start), data, loss, tc, &report);
  const std::string raw_path = ov.str("--save-raw", a.save_raw, "");
  if (!raw_path.empty()) models::save_params(fitted, raw_path);
  models::save_params(delta ? models::add_state_passthrough(fitted) : fitted,
                      out_path);
  std::cout << "trained " << kind << " model on " << samples.count() << " samples ("
            << fitted.hidden_dim() << " hidden units, " << tc.epochs << " epochs"
            << (delta ? ", delta targets + state passthrough" : "") << ")\n";
  if (!report.epoch_loss.empty()) {
    std::cout << "loss: first epoch " << report.epoch_loss.front() << ", last epoch "
              << report.epoch_loss.back() << '\n';
  }
  std::cout << "wrote " << out_path << '\n';
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string config_path, data, mean, out;
  double rho = 0.97, alpha = -1.0;
};

int run_calibrate(CLI::App* sub, const CalibrateArgs& a) {
  const Overlay ov = make_overlay(sub, a.config_path);
  const std::string data_path = ov.str("--data", a.data, "");
  const std::string mean_path = ov.str("--mean", a.mean, "");
  const std::string out_path = ov.str("--out", a.out, "");
  require_value(data_path, "--data");
  require_value(mean_path, "--mean");
  require_value(out_path, "--out");
  const double rho = ov.num("--rho", a.rho, 0.97);

  const auto samples = io::load_samples(data_path);
  const auto mean = models::load_params(mean_path);
  const auto set = experiment::build_error_set(samples, mean, rho);
  conformal::save_error_set(set, out_path);
  std::cout << "calibration set: " << set.count() << " residuals, rho " << rho << '\n';

  const double alpha = ov.num("--alpha", a.alpha, -1.0);
  if (alpha > 0.0 && alpha < 1.0 && set.count() > 0) {
    std::vector<double> norms;
    norms.reserve(set.points.size());
    for (const auto& p : set.points) norms.push_back(p.residual.norm());
    std::sort(norms.begin(), norms.end());
    const auto n = static_cast<double>(norms.size());
    const auto idx = static_cast<std::size_t>(std::min(
        n - 1.0, std::ceil((1.0 - alpha) * (n + 1.0)) - 1.0));
    std::cout << "unweighted residual-norm quantile at level " << (1.0 - alpha)
              << ": " << norms[idx] << '\n';
  }
  std::cout << "wrote " << out_path << '\n';
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// run

struct RunArgs {
  std::string config_path, scenario = "car-id", mode = "cp-ellipsoid";
  std::string mean, cov, errors, out_dir, dump_plan;
  int trials = 10, max_steps = -1, horizon = -1, active = -1, l_reps = -1, threads = 0;
  std::uint64_t seed = 0;
  double tau = -1.0, rho = -1.0, alpha_k = -1.0;
};

void print_summary(const metrics::MetricsSummary& s) {
  std::cout << "trials " << s.trials << ": success " << s.success_count << '/'
            << s.trials << ", collisions " << s.collision_count;
  if (std::isfinite(s.mean_coverage)) std::cout << ", coverage " << s.mean_coverage;
  if (std::isfinite(s.mean_min_obstacle_distance))
    std::cout << ", mean min obstacle distance " << s.mean_min_obstacle_distance;
  if (std::isfinite(s.mean_step_ms))
    std::cout << ", step time " << s.mean_step_ms << " +- " << s.std_step_ms << " ms";
  if (std::isfinite(s.mean_pred_error))
    std::cout << ", prediction error " << s.mean_pred_error;
  std::cout << '\n';
}

void dump_plan(const experiment::ExperimentConfig& ecfg, const std::string& path) {
  auto prep = experiment::prepare_experiment(ecfg);
  mpc::MpcConfig cfg = prep.mpc_cfg;
  const mpc::Task task = scenario::make_task(prep.setup, cfg, ecfg.base_seed);
  mpc::Plan plan = mpc::initial_plan(task.start, cfg);
  for (int i = 0; i < cfg.warmup_iters; ++i) {
    plan = mpc::solve_plan(task.start, plan, cfg, task.constraints, prep.models,
                           prep.error_set);
  }
  nlohmann::json j;
  j["status"] = plan.status == sls::ScpStatus::Optimal      ? "optimal"
                : plan.status == sls::ScpStatus::Infeasible ? "infeasible"
                                                            : "max-iter";
  j["objective"] = plan.objective;
  j["degraded"] = plan.degraded;
  j["quantiles"] = plan.quantiles;
  auto as_rows = [](const std::vector<Vec>& cols) {
    std::vector<std::vector<double>> rows;
    rows.reserve(cols.size());
    for (const auto& c : cols) rows.emplace_back(c.data(), c.data() + c.size());
    return rows;
  };
  j["states"] = as_rows(plan.nominal.x);
  j["controls"] = as_rows(plan.nominal.u);
  j["tube_state_extent"] = as_rows(plan.tube.state_extent);
  j["tube_control_extent"] = as_rows(plan.tube.control_extent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  std::cout << "wrote plan dump " << path << '\n';
}

int run_run(CLI::App* sub, const RunArgs& a) {
  const Overlay ov = make_overlay(sub, a.config_path);
  experiment::ExperimentConfig ecfg;
  ecfg.scenario = dynamics::tag_from_string(ov.str("--scenario", a.scenario, "car-id"));
  ecfg.mode = mpc::mode_from_string(ov.str("--mode", a.mode, "cp-ellipsoid"));
  ecfg.mean_model_path = ov.str("--mean", a.mean, "");
  ecfg.cov_model_path = ov.str("--cov", a.cov, "");
  ecfg.error_set_path = ov.str("--errors", a.errors, "");
  ecfg.out_dir = ov.str("--out-dir", a.out_dir, "");
  ecfg.trials = ov.num("--trials", a.trials, 10);
  ecfg.base_seed = ov.num("--seed", a.seed, std::uint64_t{0});
  ecfg.tau = ov.num("--tau", a.tau, -1.0);
  ecfg.rho = ov.num("--rho", a.rho, -1.0);
  ecfg.alpha_k = ov.num("--alpha-k", a.alpha_k, -1.0);
  ecfg.max_steps = ov.num("--max-steps", a.max_steps, -1);
  ecfg.horizon = ov.num("--horizon", a.horizon, -1);
  ecfg.active = ov.num("--active", a.active, -1);
  ecfg.active_l_reps = ov.num("--l-reps", a.l_reps, -1);
  ecfg.threads = ov.num("--threads", a.threads, 0);

  const std::string plan_path = ov.str("--dump-plan", a.dump_plan, "");
  if (!plan_path.empty()) dump_plan(ecfg, plan_path);

  const auto result = experiment::run_experiment(ecfg);
  print_summary(result.summary);
  if (!ecfg.out_dir.empty()) std::cout << "wrote " << ecfg.out_dir << '\n';
  if (result.any_unfinished) {
    std::cout << "some trials did not reach the goal\n";
    return kExitUnfinished;
  }
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// theory-toy

struct TheoryArgs {
  std::string config_path, out_dir;
  int trials = 100, epsilon_pairs = 250, tv_cache = 1024;
  double alpha = 0.1;
  std::uint64_t seed = 2024;
  std::vector<double> n_calib{32, 128};
  std::vector<double> rho_values{0.999, 0.9, 0.5, 0.1};
};

int run_theory_toy(CLI::App* sub, const TheoryArgs& a) {
  const Overlay ov = make_overlay(sub, a.config_path);
  theory::ToyConfig cfg;
  cfg.trials = ov.num("--trials", a.trials, cfg.trials);
  cfg.alpha = ov.num("--alpha", a.alpha, cfg.alpha);
  cfg.seed = ov.num("--seed", a.seed, cfg.seed);
  cfg.epsilon_pairs = ov.num("--epsilon-pairs", a.epsilon_pairs, cfg.epsilon_pairs);
  cfg.tv_cache_size = ov.num("--tv-cache", a.tv_cache, cfg.tv_cache_size);
  cfg.rho = ov.list("--rho-values", a.rho_values, cfg.rho);
  cfg.n_calib.clear();
  for (double n : ov.list("--n-calib", a.n_calib, {32, 128}))
    cfg.n_calib.push_back(static_cast<int>(n));

  const auto cells = theory::toy_experiment(cfg);
  std::cout << std::setw(8) << "rho" << std::setw(8) << "n" << std::setw(12)
            << "coverage" << std::setw(12) << "barber" << std::setw(12) << "ours"
            << std::setw(12) << "inf-rate" << '\n';
  for (const auto& c : cells) {
    std::cout << std::setw(8) << c.rho << std::setw(8) << c.n_calib << std::setw(12)
              << c.coverage << std::setw(12) << c.barber_bound << std::setw(12)
              << c.cpsls_bound << std::setw(12) << c.infinite_rate << '\n';
  }
  const std::string out_dir = ov.str("--out-dir", a.out_dir, "");
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const auto path = (fs::path(out_dir) / "toy_coverage.csv").string();
    theory::write_toy_csv(cells, path);
    std::cout << "wrote " << path << '\n';
  }
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// report

int run_report(const std::string& out_dir) {
  const fs::path path = fs::path(out_dir) / "summary.csv";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell.size() > 10) {  // shorten precision-17 numerals for the table
        try {
          std::size_t pos = 0;
          const double v = std::stod(cell, &pos);
          if (pos == cell.size()) {
            std::ostringstream fmt;
            fmt << std::setprecision(4) << v;
            cell = fmt.str();
          }
        } catch (const std::exception&) {
        }
      }
      cells.push_back(cell);
    }
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw std::runtime_error("empty summary: " + path.string());
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c)
      std::cout << std::setw(static_cast<int>(width[c]) + 2) << row[c];
    std::cout << '\n';
  }
  return kExitSuccess;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conformal-calibrated robust tube MPC toolkit"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "sample labeled transition datasets");
  gen->add_option("--config", gd.config_path, "key-value config file");
  gen->add_option("--scenario", gd.scenario,
                  "car-id | car-ood-attract | car-friction | car-active-region | "
                  "quad-fall");
  gen->add_option("--seed", gd.seed, "RNG seed");
  gen->add_option("--out-dir", gd.out_dir, "output directory");
  gen->add_option("--train-count", gd.train_count, "training transitions");
  gen->add_option("--uncertainty-count", gd.uncertainty_count,
                  "covariance-fit transitions");
  gen->add_option("--calibration-count", gd.calibration_count,
                  "calibration transitions");
  gen->add_option("--dt", gd.dt, "integration step (default 0.1 car, 0.05 quad)");
  gen->add_option("--horizon", gd.horizon, "quad rollout length");
  gen->add_option("--thrust-jitter", gd.thrust_jitter,
                  "quad thrust half-width around hover (relative)");
  gen->add_option("--max-trajectories", gd.max_trajectories,
                  "quad rollout budget per split");
  gen->add_flag("--csv", gd.csv, "also write CSV mirrors");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "fit the mean or covariance network");
  train->add_option("--config", tr.config_path, "key-value config file");
  train->add_option("--data", tr.data, "training dataset (.bin)");
  train->add_option("--out", tr.out, "output model path (.json)");
  train->add_option("--kind", tr.kind, "mean | cov");
  train->add_option("--mean", tr.mean, "mean model (residual targets for cov)");
  train->add_option("--hidden", tr.hidden, "hidden units");
  train->add_option("--epochs", tr.epochs, "training epochs");
  train->add_option("--lr", tr.lr, "learning rate (default 1e-4 mean, 1e-5 cov)");
  train->add_option("--batch", tr.batch, "minibatch size");
  train->add_option("--seed", tr.seed, "init + shuffle seed");
  train->add_option("--tau", tr.tau, "covariance blend inside the loss");
  train->add_option("--w1-scale", tr.w1_scale, "first-layer init scale");
  train->add_option("--init", tr.init,
                    "warm-start weights (.json, pre-passthrough for mean)");
  train->add_option("--save-raw", tr.save_raw,
                    "also save the pre-passthrough weights for later --init");
  train->add_flag("--no-standardize", tr.no_standardize,
                  "train in raw coordinates");
  train->add_flag("--raw-targets", tr.raw_targets,
                  "mean model: fit next states directly instead of deltas");

  CalibrateArgs cal;
  auto* calibrate =
      app.add_subcommand("calibrate", "build a residual calibration set");
  calibrate->add_option("--config", cal.config_path, "key-value config file");
  calibrate->add_option("--data", cal.data, "calibration dataset (.bin)");
  calibrate->add_option("--mean", cal.mean, "mean model (.json)");
  calibrate->add_option("--out", cal.out, "output error-set path");
  calibrate->add_option("--rho", cal.rho, "distance-decay base stored with the set");
  calibrate->add_option("--alpha", cal.alpha,
                        "report the unweighted residual quantile at 1 - alpha");

  RunArgs rn;
  auto* run = app.add_subcommand("run", "closed-loop experiment batch");
  run->add_option("--config", rn.config_path, "key-value config file");
  run->add_option("--scenario", rn.scenario, "scenario tag");
  run->add_option("--mode", rn.mode, "cp-ellipsoid | cp-ball | vmpc");
  run->add_option("--mean", rn.mean, "mean model (.json)");
  run->add_option("--cov", rn.cov, "covariance model (.json)");
  run->add_option("--errors", rn.errors, "calibration error set");
  run->add_option("--out-dir", rn.out_dir, "report directory");
  run->add_option("--trials", rn.trials, "seeded trials");
  run->add_option("--seed", rn.seed, "base seed (trial i uses seed + i)");
  run->add_option("--tau", rn.tau, "covariance blend override");
  run->add_option("--rho", rn.rho, "weight-decay override");
  run->add_option("--alpha-k", rn.alpha_k, "per-step miscoverage override");
  run->add_option("--max-steps", rn.max_steps, "step budget override");
  run->add_option("--horizon", rn.horizon, "planning horizon override");
  run->add_option("--active", rn.active,
                  "data-proximity cost: -1 scenario default, 0 off, 1 on");
  run->add_option("--l-reps", rn.l_reps, "k-means representative budget");
  run->add_option("--threads", rn.threads, "worker threads (0 = hardware)");
  run->add_option("--dump-plan", rn.dump_plan,
                  "write the warmed-up first plan as JSON to this path");

  TheoryArgs th;
  auto* theory_toy =
      app.add_subcommand("theory-toy", "coverage study on the analytic disk field");
  theory_toy->add_option("--config", th.config_path, "key-value config file");
  theory_toy->add_option("--out-dir", th.out_dir, "CSV output directory");
  theory_toy->add_option("--trials", th.trials, "trials per (rho, n) cell");
  theory_toy->add_option("--alpha", th.alpha, "miscoverage level");
  theory_toy->add_option("--seed", th.seed, "base seed");
  theory_toy->add_option("--n-calib", th.n_calib, "calibration sizes");
  theory_toy->add_option("--rho-values", th.rho_values, "decay bases");
  theory_toy->add_option("--epsilon-pairs", th.epsilon_pairs,
                         "pairs for the Lipschitz-constant probe");
  theory_toy->add_option("--tv-cache", th.tv_cache, "TV quadrature cache size");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "pretty-print a summary.csv");
  report->add_option("--out-dir", report_dir, "directory holding summary.csv")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitSuccess : kExitBadConfig;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen, gd);
    if (train->parsed()) return run_train(train, tr);
    if (calibrate->parsed()) return run_calibrate(calibrate, cal);
    if (run->parsed()) return run_run(run, rn);
    if (theory_toy->parsed()) return run_theory_toy(theory_toy, th);
    if (report->parsed()) return run_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadConfig;
  }
  return kExitBadConfig;  // unreachable: require_subcommand(1)
}
