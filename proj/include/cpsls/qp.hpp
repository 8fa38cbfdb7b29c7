#pragma once

#include "cpsls/common.hpp"

#include <vector>

namespace cpsls::qp {

enum class QpStatus { Optimal, Infeasible, MaxIter };

struct QpOptions {
  int max_iters{50};     ///< active-set changes before giving up
  double kkt_tol{1e-6};  ///< feasibility / stationarity tolerance
};

struct QpResult {
  Vec x;
  QpStatus status{QpStatus::MaxIter};
  int iters{0};
  std::vector<int> active;  ///< indices into the inequality rows
};

/// Minimizes 0.5 x'Hx + g'x subject to A_eq x = b_eq and A_in x <= b_in.
///
/// H must be positive semidefinite with a positive reduced Hessian on the
/// equality nullspace (a small ridge is added internally). The active set is
/// grown by sequential projection: solve the equality-constrained problem,
/// add the most violated inequality, drop constraints with negative
/// multipliers, repeat. Inconsistent working sets (detected through the
/// residual of the KKT solve) report Infeasible.
[[nodiscard]] QpResult solve_qp(const Mat& H, const Vec& g, const Mat& A_eq,
                                const Vec& b_eq, const Mat& A_in, const Vec& b_in,
                                const QpOptions& opt = {});

}  // namespace cpsls::qp
