#include "cpsls/qp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace cpsls::qp {
namespace {

/// Reduced equality-constrained solve: minimizes the working-set QP
/// [Hr A_W'; A_W 0] [y; mu] = [-gr; b_W] through a rank-revealing
/// decomposition so degenerate (parallel) working rows stay solvable.
void solve_working_set(const Mat& hr, const Vec& gr, const Mat& a_in,
                       const Vec& b_in, const std::vector<int>& w, Vec& y,
                       Vec& mu) {
  const Eigen::Index m = hr.rows();
  const Eigen::Index k = static_cast<Eigen::Index>(w.size());
  Mat kkt = Mat::Zero(m + k, m + k);
  kkt.topLeftCorner(m, m) = hr;
  Vec rhs(m + k);
  rhs.head(m) = -gr;
  for (Eigen::Index i = 0; i < k; ++i) {
    kkt.block(m + i, 0, 1, m) = a_in.row(w[i]);
    kkt.block(0, m + i, m, 1) = a_in.row(w[i]).transpose();
    rhs(m + i) = b_in(w[i]);
  }
  Vec sol = kkt.completeOrthogonalDecomposition().solve(rhs);
  y = sol.head(m);
  mu = sol.tail(k);
}

/// Primal active-set minimization of 0.5 y'Hy + g'y subject to A y <= b from
/// a feasible start. Iterates stay feasible, so even a budget exit returns a
/// usable point.
struct ActiveSetOut {
  Vec y;
  std::vector<int> active;
  bool optimal{false};
  int iters{0};
};

ActiveSetOut active_set_min(const Mat& hr, const Vec& gr, const Mat& a_in,
                            const Vec& b_in, Vec y, const QpOptions& opt) {
  ActiveSetOut out;
  std::vector<int> w;
  Vec y_star, mu;
  for (int iter = 0; iter < opt.max_iters; ++iter) {
    out.iters = iter + 1;
    solve_working_set(hr, gr, a_in, b_in, w, y_star, mu);
    const Vec d = y_star - y;

    if (d.cwiseAbs().maxCoeff() <= opt.kkt_tol) {
      // Optimal for the working set; check the multiplier signs.
      int drop = -1;
      double worst = -opt.kkt_tol;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (mu(static_cast<Eigen::Index>(i)) < worst) {
          worst = mu(static_cast<Eigen::Index>(i));
          drop = static_cast<int>(i);
        }
      }
      if (drop < 0) {
        out.y = y;
        out.active = w;
        out.optimal = true;
        return out;
      }
      w.erase(w.begin() + drop);
      continue;
    }

    // Longest feasible step along d; a blocking row joins the working set.
    double alpha = 1.0;
    int blocker = -1;
    for (Eigen::Index i = 0; i < a_in.rows(); ++i) {
      if (std::find(w.begin(), w.end(), static_cast<int>(i)) != w.end()) continue;
      const double ad = a_in.row(i).dot(d);
      if (ad <= opt.kkt_tol) continue;
      const double slack = b_in(i) - a_in.row(i).dot(y);
      const double step = std::max(slack, 0.0) / ad;
      if (step < alpha) {
        alpha = step;
        blocker = static_cast<int>(i);
      }
    }
    y += alpha * d;
    if (blocker >= 0) {
      w.push_back(blocker);
    }
  }
  out.y = y;
  out.active = w;
  return out;
}

/// Feasibility phase as its own QP: minimize t + tiny * ||(y, t)||^2 subject
/// to A y - t <= b and t >= 0, started from the trivially feasible point
/// (0, max violation). The tiny quadratic keeps the Hessian definite without
/// disturbing the minimal violation t*; the original rows are satisfiable
/// within tolerance iff t* is (approximately) zero.
double phase1(const Mat& a_in, const Vec& b_in, Vec& y, const QpOptions& opt) {
  const Eigen::Index m = y.size();
  double viol0 = 0.0;
  for (Eigen::Index i = 0; i < a_in.rows(); ++i) {
    viol0 = std::max(viol0, a_in.row(i).dot(y) - b_in(i));
  }
  if (viol0 <= opt.kkt_tol) return 0.0;

  const double scale = 1e-10 * (1.0 + viol0);
  Mat h_aug = scale * Mat::Identity(m + 1, m + 1);
  Vec g_aug = Vec::Zero(m + 1);
  g_aug(m) = 1.0;
  Mat a_aug(a_in.rows() + 1, m + 1);
  a_aug.topLeftCorner(a_in.rows(), m) = a_in;
  a_aug.topRightCorner(a_in.rows(), 1).setConstant(-1.0);
  a_aug.bottomRows(1).setZero();
  a_aug(a_in.rows(), m) = -1.0;
  Vec b_aug(b_in.size() + 1);
  b_aug.head(b_in.size()) = b_in;
  b_aug(b_in.size()) = 0.0;

  Vec start = Vec::Zero(m + 1);
  start.head(m) = y;
  start(m) = viol0 * (1.0 + 1e-9) + opt.kkt_tol;
  const ActiveSetOut sol = active_set_min(h_aug, g_aug, a_aug, b_aug,
                                          std::move(start), opt);
  std::fprintf(stderr, "[phase1] rows=%ld optimal=%d iters=%d t*=%.3e\n",
               static_cast<long>(a_in.rows()), sol.optimal ? 1 : 0, sol.iters,
               sol.y(m));
  y = sol.y.head(m);
  return std::max(sol.y(m), 0.0);
}

}  // namespace

QpResult solve_qp(const Mat& h, const Vec& g, const Mat& a_eq, const Vec& b_eq,
                  const Mat& a_in, const Vec& b_in, const QpOptions& opt) {
  const Eigen::Index n = h.rows();
  if (h.cols() != n || g.size() != n ||
      (a_eq.rows() > 0 && a_eq.cols() != n) || a_eq.rows() != b_eq.size() ||
      (a_in.rows() > 0 && a_in.cols() != n) || a_in.rows() != b_in.size()) {
    throw std::invalid_argument("solve_qp: dimension mismatch");
  }

  QpResult res;

  // Eliminate the equalities once: x = x_p + Z y with Z an orthonormal basis
  // of the nullspace of A_eq.
  Vec x_p = Vec::Zero(n);
  Mat z = Mat::Identity(n, n);
  if (a_eq.rows() > 0) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(a_eq);
    x_p = cod.solve(b_eq);
    const double eq_resid = (a_eq * x_p - b_eq).cwiseAbs().maxCoeff();
    if (eq_resid > opt.kkt_tol * (1.0 + b_eq.cwiseAbs().maxCoeff())) {
      res.status = QpStatus::Infeasible;
      res.x = x_p;
      return res;
    }
    const Eigen::Index rank = cod.rank();
    if (rank >= n) {
      z.resize(n, 0);
    } else {
      // Nullspace basis from the full QR of A_eq^T.
      Eigen::HouseholderQR<Mat> qr(a_eq.transpose());
      Mat q = qr.householderQ();
      z = q.rightCols(n - rank);
    }
  }
  const Eigen::Index m = z.cols();

  Mat a_red;
  Vec b_red;
  if (a_in.rows() > 0) {
    a_red = a_in * z;
    b_red = b_in - a_in * x_p;
  } else {
    a_red.resize(0, m);
    b_red.resize(0);
  }

  if (m == 0) {
    res.x = x_p;
    const bool ok = a_in.rows() == 0 ||
                    (a_in * x_p - b_in).maxCoeff() <= opt.kkt_tol;
    res.status = ok ? QpStatus::Optimal : QpStatus::Infeasible;
    return res;
  }

  Mat hr = z.transpose() * h * z;
  hr = 0.5 * (hr + hr.transpose());
  hr.diagonal().array() += 1e-10 * (1.0 + hr.diagonal().cwiseAbs().maxCoeff());
  Vec gr = z.transpose() * (g + h * x_p);

  Vec y = Vec::Zero(m);
  if (a_red.rows() > 0) {
    const double viol = phase1(a_red, b_red, y, opt);
    if (viol > opt.kkt_tol) {
      res.status = QpStatus::Infeasible;
      res.x = x_p + z * y;
      return res;
    }
  }

  const ActiveSetOut sol = active_set_min(hr, gr, a_red, b_red, std::move(y), opt);
  res.x = x_p + z * sol.y;
  res.active = sol.active;
  res.iters = sol.iters;
  res.status = sol.optimal ? QpStatus::Optimal : QpStatus::MaxIter;
  return res;
}

}  // namespace cpsls::qp
