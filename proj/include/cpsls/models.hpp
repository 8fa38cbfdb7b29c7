#pragma once

#include "cpsls/common.hpp"

#include <string>
#include <vector>

namespace cpsls::models {

/// One-hidden-layer tanh network y = W2 * tanh(W1 * in + b1) + b2.
struct MlpParams {
  Mat W1;  ///< hidden x input
  Vec b1;  ///< hidden
  Mat W2;  ///< output x hidden
  Vec b2;  ///< output

  [[nodiscard]] int input_dim() const { return static_cast<int>(W1.cols()); }
  [[nodiscard]] int hidden_dim() const { return static_cast<int>(W1.rows()); }
  [[nodiscard]] int output_dim() const { return static_cast<int>(W2.rows()); }

  /// Throws std::invalid_argument on inconsistent shapes or non-finite values.
  void validate() const;
};

/// Seeded uniform initialization. `w1_scale` bounds the entries of W1 (pick
/// roughly 1 / (sqrt(fan_in) * typical input magnitude) so tanh units start
/// in their active range); W2 is scaled by 1/sqrt(hidden).
[[nodiscard]] MlpParams random_init(int n_in, int hidden, int n_out,
                                    std::uint64_t seed, double w1_scale);

/// Rewrites y = net(in) into y = net(in) + in[0 : n_out] by appending one
/// near-linear hidden unit per output: tanh(delta * in_j) / delta equals in_j
/// up to delta^2 |in_j|^3 / 3, so a network trained on one-step deltas becomes
/// a next-state map while remaining a plain tanh network (exact Jacobians,
/// same persistence format). Requires output_dim <= input_dim; delta trades
/// truncation error (smaller is better) against the W2 entries 1/delta it
/// introduces (larger is better); 1e-4 keeps both below 1e-5 for |in| <= 12.
[[nodiscard]] MlpParams add_state_passthrough(MlpParams p, double delta = 1e-4);

/// Forward pass on a concatenated input vector.
[[nodiscard]] Vec mlp_forward_in(const MlpParams& p, const Vec& in);

/// Forward pass on a state/control pair (inputs are concatenated [x; u]).
[[nodiscard]] Vec mlp_forward(const MlpParams& p, const Vec& x, const Vec& u);

/// Exact Jacobian of the forward pass split into state and control blocks
/// (A = d y / d x, B = d y / d u).
[[nodiscard]] std::pair<Mat, Mat> mlp_jacobian(const MlpParams& p, const Vec& x,
                                               const Vec& u);

/// Covariance-model output: Sigma = (1 - tau) I + tau (Lr Lr^T + floor^2 I)
/// where Lr is the lower-triangular matrix read off the raw network outputs
/// with diagonal exp(raw) + floor. L is the Cholesky factor of Sigma.
struct CovModelOutput {
  Mat L;
  Mat Sigma;
};

/// Maps raw network outputs (n(n+1)/2 values, row-major lower triangle) to a
/// blended SPD covariance. tau in [0, 1]; floor > 0 keeps the smallest
/// eigenvalue of Sigma at least (1 - tau) + tau * floor^2.
[[nodiscard]] CovModelOutput cov_forward(const MlpParams& p, const Vec& z,
                                         const Vec& v, double tau,
                                         double floor = 1e-4);

/// Builds the blended covariance directly from a raw output vector (exposed
/// for the training loop and tests).
[[nodiscard]] CovModelOutput cov_from_raw(const Vec& raw, int n, double tau,
                                          double floor);

/// Gaussian negative log-likelihood (up to the constant term):
/// 0.5 * (r^T Sigma^{-1} r + log det Sigma). Solved through the Cholesky
/// factor; throws std::invalid_argument if Sigma is not SPD.
[[nodiscard]] double mgnll_loss(const Mat& Sigma, const Vec& residual);
[[nodiscard]] double mgnll_loss_chol(const Mat& L, const Vec& residual);

enum class LossKind { Mse, Mgnll };

struct TrainConfig {
  double lr{1e-4};        ///< MSE default; use 1e-5 for the covariance model
  int epochs{100};
  int batch{64};
  std::uint64_t seed{0};
  double tau{1.0};        ///< covariance blend used inside the MGNLL loss
  double diag_floor{1e-4};
  bool standardize{true}; ///< optimize in standardized coordinates, then fold
                          ///< the affine maps back into the weights
  bool verbose{false};
};

/// Column-major sample store: inputs is n_in x N, targets is n_t x N.
/// For MSE the targets are next states; for MGNLL they are residuals and the
/// network output dimension must be n_x (n_x + 1) / 2.
struct Dataset {
  Mat inputs;
  Mat targets;
  [[nodiscard]] int count() const { return static_cast<int>(inputs.cols()); }
};

struct TrainReport {
  std::vector<double> epoch_loss;  ///< mean per-sample loss after each epoch
};

/// Plain minibatch SGD with hand-derived gradients. Deterministic given the
/// seed. Returns the model unchanged when epochs == 0. Throws
/// std::runtime_error if the loss becomes non-finite.
[[nodiscard]] MlpParams train(MlpParams model, const Dataset& data, LossKind loss,
                              const TrainConfig& cfg, TrainReport* report = nullptr);

/// Versioned JSON persistence (shapes + row-major weight arrays).
void save_params(const MlpParams& p, const std::string& path);
[[nodiscard]] MlpParams load_params(const std::string& path);

}  // namespace cpsls::models
