#include "cpsls/models.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace cpsls::models {
namespace {

using nlohmann::json;

Vec concat(const Vec& x, const Vec& u) {
  Vec in(x.size() + u.size());
  in << x, u;
  return in;
}

/// Batched forward pass; returns hidden activations through `a1` when the
/// caller needs them for backprop.
Mat forward_batch(const MlpParams& p, const Mat& in, Mat* a1 = nullptr) {
  Mat z1 = (p.W1 * in).colwise() + p.b1;
  Mat act = z1.array().tanh();
  Mat out = (p.W2 * act).colwise() + p.b2;
  if (a1 != nullptr) *a1 = std::move(act);
  return out;
}

json matrix_to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  }
  return a;
}

Mat matrix_from_json(const json& a, Eigen::Index rows, Eigen::Index cols,
                     const char* name) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(rows * cols)) {
    throw std::runtime_error(std::string("model file: field ") + name +
                             " has the wrong length");
  }
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = a[k++].get<double>();
  }
  return m;
}

}  // namespace

void MlpParams::validate() const {
  if (W1.rows() == 0 || W1.cols() == 0 || W2.rows() == 0) {
    throw std::invalid_argument("MlpParams: empty weight matrix");
  }
  if (b1.size() != W1.rows() || W2.cols() != W1.rows() || b2.size() != W2.rows()) {
    throw std::invalid_argument("MlpParams: inconsistent shapes");
  }
  require_finite(W1, "W1");
  require_finite(b1, "b1");
  require_finite(W2, "W2");
  require_finite(b2, "b2");
}

MlpParams random_init(int n_in, int hidden, int n_out, std::uint64_t seed,
                      double w1_scale) {
  if (n_in <= 0 || hidden <= 0 || n_out <= 0 || w1_scale <= 0.0) {
    throw std::invalid_argument("random_init: dimensions and scale must be positive");
  }
  std::mt19937_64 rng = make_rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  MlpParams p;
  p.W1 = Mat::NullaryExpr(hidden, n_in, [&] { return w1_scale * unit(rng); });
  p.b1 = Vec::Zero(hidden);
  double w2_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.W2 = Mat::NullaryExpr(n_out, hidden, [&] { return w2_scale * unit(rng); });
  p.b2 = Vec::Zero(n_out);
  return p;
}

MlpParams add_state_passthrough(MlpParams p, double delta) {
  p.validate();
  if (delta <= 0.0) {
    throw std::invalid_argument("add_state_passthrough: delta must be positive");
  }
  const int n_in = p.input_dim();
  const int n_out = p.output_dim();
  const int hidden = p.hidden_dim();
  if (n_out > n_in) {
    throw std::invalid_argument(
        "add_state_passthrough: needs output_dim <= input_dim");
  }
  MlpParams out;
  out.W1 = Mat::Zero(hidden + n_out, n_in);
  out.W1.topRows(hidden) = p.W1;
  out.b1 = Vec::Zero(hidden + n_out);
  out.b1.head(hidden) = p.b1;
  out.W2 = Mat::Zero(n_out, hidden + n_out);
  out.W2.leftCols(hidden) = p.W2;
  out.b2 = p.b2;
  for (int j = 0; j < n_out; ++j) {
    out.W1(hidden + j, j) = delta;
    out.W2(j, hidden + j) = 1.0 / delta;
  }
  return out;
}

Vec mlp_forward_in(const MlpParams& p, const Vec& in) {
  if (in.size() != p.input_dim()) {
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  }
  require_finite(in, "mlp input");
  return p.W2 * (p.W1 * in + p.b1).array().tanh().matrix() + p.b2;
}

Vec mlp_forward(const MlpParams& p, const Vec& x, const Vec& u) {
  return mlp_forward_in(p, concat(x, u));
}

std::pair<Mat, Mat> mlp_jacobian(const MlpParams& p, const Vec& x, const Vec& u) {
  Vec in = concat(x, u);
  if (in.size() != p.input_dim()) {
    throw std::invalid_argument("mlp_jacobian: input dimension mismatch");
  }
  require_finite(in, "mlp input");
  Vec a = (p.W1 * in + p.b1).array().tanh();
  // d tanh(z) / d z = 1 - tanh(z)^2, applied row-wise to W1.
  Mat j = p.W2 * (1.0 - a.array().square()).matrix().asDiagonal() * p.W1;
  return {j.leftCols(x.size()), j.rightCols(u.size())};
}

CovModelOutput cov_from_raw(const Vec& raw, int n, double tau, double floor) {
  if (raw.size() != n * (n + 1) / 2) {
    throw std::invalid_argument("cov_from_raw: raw output length mismatch");
  }
  if (tau < 0.0 || tau > 1.0 || floor <= 0.0) {
    throw std::invalid_argument("cov_from_raw: need tau in [0,1], floor > 0");
  }
  Mat lr = Mat::Zero(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      lr(i, j) = (i == j) ? std::exp(raw(k)) + floor : raw(k);
    }
  }
  Mat sigma = (1.0 - tau) * Mat::Identity(n, n) +
              tau * (lr * lr.transpose() + floor * floor * Mat::Identity(n, n));
  CovModelOutput out;
  out.Sigma = 0.5 * (sigma + sigma.transpose());
  Eigen::LLT<Mat> llt(out.Sigma);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("cov_from_raw: blended covariance not SPD");
  }
  out.L = llt.matrixL();
  return out;
}

CovModelOutput cov_forward(const MlpParams& p, const Vec& z, const Vec& v,
                           double tau, double floor) {
  Vec raw = mlp_forward(p, z, v);
  int n = static_cast<int>(
      std::llround((std::sqrt(8.0 * static_cast<double>(raw.size()) + 1.0) - 1.0) / 2.0));
  return cov_from_raw(raw, n, tau, floor);
}

double mgnll_loss_chol(const Mat& L, const Vec& residual) {
  if (L.rows() != L.cols() || residual.size() != L.rows()) {
    throw std::invalid_argument("mgnll_loss: dimension mismatch");
  }
  Vec w = L.triangularView<Eigen::Lower>().solve(residual);
  double logdet = 2.0 * L.diagonal().array().log().sum();
  return 0.5 * (w.squaredNorm() + logdet);
}

double mgnll_loss(const Mat& Sigma, const Vec& residual) {
  Eigen::LLT<Mat> llt(Sigma);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("mgnll_loss: Sigma is not SPD");
  }
  return mgnll_loss_chol(Mat(llt.matrixL()), residual);
}

namespace {

/// Loss + gradient wrt the raw covariance outputs for one sample.
double mgnll_raw_grad(const Vec& raw, const Vec& residual, double tau, double floor,
                      Vec& grad) {
  const int n = static_cast<int>(residual.size());
  Mat lr = Mat::Zero(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      lr(i, j) = (i == j) ? std::exp(raw(k)) + floor : raw(k);
    }
  }
  Mat sigma = (1.0 - tau) * Mat::Identity(n, n) +
              tau * (lr * lr.transpose() + floor * floor * Mat::Identity(n, n));
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("mgnll gradient: covariance lost positive definiteness");
  }
  Vec g = llt.solve(residual);
  Mat sigma_inv = llt.solve(Mat::Identity(n, n));
  // d loss / d Sigma for loss = 0.5 (r' S^-1 r + ln det S).
  Mat gs = 0.5 * (sigma_inv - g * g.transpose());
  // Sigma depends on the triangular factor through tau * (Lr Lr' ): chain
  // rule gives 2 tau (Gs Lr) on the lower triangle; diagonal entries carry
  // the extra exp() factor from the positivity map.
  Mat gl = 2.0 * tau * (gs * lr);
  grad.resize(raw.size());
  k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      grad(k) = (i == j) ? gl(i, j) * std::exp(raw(k)) : gl(i, j);
    }
  }
  Mat l = llt.matrixL();
  return 0.5 * (llt.matrixL().solve(residual).squaredNorm() +
                2.0 * l.diagonal().array().log().sum());
}

}  // namespace

MlpParams train(MlpParams model, const Dataset& data, LossKind loss,
                const TrainConfig& cfg, TrainReport* report) {
  model.validate();
  if (data.count() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.inputs.rows() != model.input_dim()) {
    throw std::invalid_argument("train: dataset input dimension mismatch");
  }
  if (cfg.lr <= 0.0 || cfg.batch <= 0) {
    throw std::invalid_argument("train: lr and batch must be positive");
  }
  const int n_out = model.output_dim();
  if (loss == LossKind::Mse && data.targets.rows() != n_out) {
    throw std::invalid_argument("train: target dimension mismatch");
  }
  if (loss == LossKind::Mgnll) {
    const int n_x = static_cast<int>(data.targets.rows());
    if (n_out != n_x * (n_x + 1) / 2) {
      throw std::invalid_argument(
          "train: covariance model output must have n(n+1)/2 entries");
    }
  }
  if (cfg.epochs == 0) return model;

  const int count = data.count();

  // Optimize in standardized coordinates for conditioning; the affine
  // standardization maps are expressible inside the first (and, for MSE,
  // last) layer, so they can be folded back out after training and the
  // returned artifact is still a plain tanh network.
  Vec in_mean = Vec::Zero(model.input_dim());
  Vec in_std = Vec::Ones(model.input_dim());
  Vec out_mean = Vec::Zero(n_out);
  Vec out_std = Vec::Ones(n_out);
  if (cfg.standardize) {
    in_mean = data.inputs.rowwise().mean();
    in_std = ((data.inputs.colwise() - in_mean).array().square().rowwise().sum() /
              std::max(count - 1, 1))
                 .sqrt()
                 .max(1e-8);
    if (loss == LossKind::Mse) {
      out_mean = data.targets.rowwise().mean();
      out_std = ((data.targets.colwise() - out_mean).array().square().rowwise().sum() /
                 std::max(count - 1, 1))
                    .sqrt()
                    .max(1e-8);
    }
    model.b1 += model.W1 * in_mean;
    model.W1 = model.W1 * in_std.asDiagonal();
    if (loss == LossKind::Mse) {
      model.W2 = out_std.cwiseInverse().asDiagonal() * model.W2;
      model.b2 = out_std.cwiseInverse().asDiagonal() * (model.b2 - out_mean);
    }
  }

  Mat inputs = cfg.standardize
                   ? ((data.inputs.colwise() - in_mean).array().colwise() /
                      in_std.array())
                         .matrix()
                   : data.inputs;
  Mat targets = (cfg.standardize && loss == LossKind::Mse)
                    ? ((data.targets.colwise() - out_mean).array().colwise() /
                       out_std.array())
                          .matrix()
                    : data.targets;

  std::mt19937_64 rng = make_rng(cfg.seed);
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < count; start += cfg.batch) {
      const int b = std::min(cfg.batch, count - start);
      Mat in_b(inputs.rows(), b), tg_b(targets.rows(), b);
      for (int i = 0; i < b; ++i) {
        in_b.col(i) = inputs.col(order[start + i]);
        tg_b.col(i) = targets.col(order[start + i]);
      }
      Mat a1;
      Mat out = forward_batch(model, in_b, &a1);

      Mat dout(n_out, b);
      double batch_loss = 0.0;
      if (loss == LossKind::Mse) {
        dout = (out - tg_b) / b;
        batch_loss = 0.5 * (out - tg_b).squaredNorm() / b;
      } else {
        Vec grad;
        for (int i = 0; i < b; ++i) {
          batch_loss += mgnll_raw_grad(out.col(i), tg_b.col(i), cfg.tau,
                                       cfg.diag_floor, grad) /
                        b;
          dout.col(i) = grad / b;
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      epoch_loss += batch_loss * b;

      Mat dz1 = (model.W2.transpose() * dout).array() * (1.0 - a1.array().square());
      model.W2 -= cfg.lr * (dout * a1.transpose());
      model.b2 -= cfg.lr * dout.rowwise().sum();
      model.W1 -= cfg.lr * (dz1 * in_b.transpose());
      model.b1 -= cfg.lr * dz1.rowwise().sum();
    }
    if (report != nullptr) report->epoch_loss.push_back(epoch_loss / count);
  }

  if (cfg.standardize) {
    model.W1 = model.W1 * in_std.cwiseInverse().asDiagonal();
    model.b1 -= model.W1 * in_mean;
    if (loss == LossKind::Mse) {
      model.W2 = out_std.asDiagonal() * model.W2;
      model.b2 = out_std.asDiagonal() * model.b2 + out_mean;
    }
  }
  model.validate();
  return model;
}

void save_params(const MlpParams& p, const std::string& path) {
  p.validate();
  json j;
  j["format"] = "cpsls-mlp";
  j["version"] = 1;
  j["input_dim"] = p.input_dim();
  j["hidden_dim"] = p.hidden_dim();
  j["output_dim"] = p.output_dim();
  j["W1"] = matrix_to_json(p.W1);
  j["b1"] = matrix_to_json(p.b1);
  j["W2"] = matrix_to_json(p.W2);
  j["b2"] = matrix_to_json(p.b2);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  out << j.dump();
}

MlpParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_params: invalid JSON in " + path + ": " + e.what());
  }
  if (j.value("format", "") != "cpsls-mlp" || j.value("version", 0) != 1) {
    throw std::runtime_error("load_params: unrecognized model format in " + path);
  }
  const auto n_in = j.at("input_dim").get<Eigen::Index>();
  const auto hidden = j.at("hidden_dim").get<Eigen::Index>();
  const auto n_out = j.at("output_dim").get<Eigen::Index>();
  MlpParams p;
  p.W1 = matrix_from_json(j.at("W1"), hidden, n_in, "W1");
  p.b1 = matrix_from_json(j.at("b1"), hidden, 1, "b1");
  p.W2 = matrix_from_json(j.at("W2"), n_out, hidden, "W2");
  p.b2 = matrix_from_json(j.at("b2"), n_out, 1, "b2");
  p.validate();
  return p;
}

}  // namespace cpsls::models
