#include "cpsls/sls.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace cpsls::sls {
namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void LtvModel::validate() const {
  require(A.size() == B.size() && A.size() == E.size(),
          "LtvModel: A/B/E list lengths differ");
  for (std::size_t k = 0; k < A.size(); ++k) {
    const auto n = A[k].rows();
    require(A[k].cols() == n, "LtvModel: A block not square");
    require(B[k].rows() == n, "LtvModel: B row count mismatch");
    require(E[k].rows() == n && E[k].cols() == n, "LtvModel: E block not n_x by n_x");
    require(A[k].rows() == A[0].rows() && B[k].cols() == B[0].cols(),
            "LtvModel: block sizes vary across the horizon");
  }
}

double response_residual(const LtvModel& ltv, const SystemResponse& resp) {
  ltv.validate();
  const int T = resp.horizon();
  require(ltv.horizon() == T, "response_residual: horizon mismatch");
  require(static_cast<int>(resp.phi_u.size()) == T,
          "response_residual: phi_u horizon mismatch");
  double worst = 0.0;
  for (int j = 0; j + 1 < T; ++j) {
    worst = std::max(worst, (resp.phi_x[j + 1][j] - ltv.E[j]).norm());
  }
  for (int k = 1; k + 1 < T; ++k) {
    for (int j = 0; j < k; ++j) {
      worst = std::max(worst, (resp.phi_x[k + 1][j] - ltv.A[k] * resp.phi_x[k][j] -
                               ltv.B[k] * resp.phi_u[k][j])
                                  .norm());
    }
  }
  return worst;
}

ConstraintSpec linear_constraint(Vec c_x, Vec c_u, double b, std::string name) {
  ConstraintSpec spec;
  spec.b = b;
  spec.uses_control = c_u.size() > 0 && c_u.norm() > 0.0;
  spec.name = std::move(name);
  spec.g = [c_x, c_u](const Vec& x, const Vec& u) {
    double val = c_x.dot(x);
    if (c_u.size() > 0) val += c_u.dot(u);
    return val;
  };
  spec.grad = [c_x, c_u](const Vec&, const Vec& u, Vec& gx, Vec& gu) {
    gx = c_x;
    gu = c_u.size() > 0 ? Vec(c_u) : Vec(Vec::Zero(u.size()));
  };
  return spec;
}

ConstraintSpec keep_out_circle(Vec center, double radius, std::vector<int> dims,
                               std::string name) {
  require(center.size() == static_cast<Eigen::Index>(dims.size()),
          "keep_out_circle: center/dims size mismatch");
  ConstraintSpec spec;
  spec.b = 0.0;
  spec.uses_control = false;
  spec.name = std::move(name);
  auto offset = [center, dims](const Vec& x) {
    Vec p(center.size());
    for (std::size_t i = 0; i < dims.size(); ++i) p(i) = x(dims[i]);
    return Vec(p - center);
  };
  spec.g = [offset, radius](const Vec& x, const Vec&) {
    return radius - offset(x).norm();
  };
  spec.grad = [offset, dims](const Vec& x, const Vec& u, Vec& gx, Vec& gu) {
    gx = Vec::Zero(x.size());
    gu = Vec::Zero(u.size());
    Vec d = offset(x);
    const double dist = d.norm();
    if (dist > 1e-12) {
      for (std::size_t i = 0; i < dims.size(); ++i) gx(dims[i]) = -d(i) / dist;
    }
  };
  return spec;
}

Linearization linearize(const models::MlpParams& model, const Vec& z, const Vec& v) {
  auto [A, B] = models::mlp_jacobian(model, z, v);
  return {std::move(A), std::move(B)};
}

Linearization numeric_jacobian(const std::function<Vec(const Vec&, const Vec&)>& step,
                               const Vec& z, const Vec& v, double eps) {
  const Vec base = step(z, v);
  Mat A(base.size(), z.size());
  Mat B(base.size(), v.size());
  Vec zp = z, vp = v;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    zp(i) = z(i) + eps;
    const Vec hi = step(zp, v);
    zp(i) = z(i) - eps;
    const Vec lo = step(zp, v);
    zp(i) = z(i);
    A.col(i) = (hi - lo) / (2.0 * eps);
  }
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    vp(i) = v(i) + eps;
    const Vec hi = step(z, vp);
    vp(i) = v(i) - eps;
    const Vec lo = step(z, vp);
    vp(i) = v(i);
    B.col(i) = (hi - lo) / (2.0 * eps);
  }
  return {std::move(A), std::move(B)};
}

Trajectory closed_loop_rollout(const LtvModel& ltv, const SystemResponse& resp,
                               const Trajectory& nominal, const std::vector<Vec>& xi,
                               double residual_tol) {
  const int T = resp.horizon();
  require(static_cast<int>(nominal.x.size()) == T, "rollout: nominal state count");
  require(static_cast<int>(nominal.u.size()) == T - 1, "rollout: nominal control count");
  require(static_cast<int>(xi.size()) == T - 1, "rollout: disturbance count");
  for (const Vec& w : xi) {
    require(w.norm() <= 1.0 + 1e-9, "rollout: disturbance outside the unit ball");
  }
  if (response_residual(ltv, resp) > residual_tol) {
    throw std::invalid_argument("rollout: response violates the consistency check");
  }
  Trajectory out;
  out.x.resize(T);
  out.u.resize(T - 1);
  for (int k = 0; k < T; ++k) {
    Vec x = nominal.x[k];
    for (int j = 0; j < k; ++j) x += resp.phi_x[k][j] * xi[j];
    out.x[k] = std::move(x);
    if (k < T - 1) {
      Vec u = nominal.u[k];
      for (int j = 0; j < k; ++j) u += resp.phi_u[k][j] * xi[j];
      out.u[k] = std::move(u);
    }
  }
  return out;
}

Tube tube_extents(const SystemResponse& resp, const Trajectory& nominal) {
  const int T = resp.horizon();
  require(static_cast<int>(nominal.x.size()) == T, "tube_extents: nominal mismatch");
  Tube tube;
  tube.state_extent.resize(T);
  tube.control_extent.resize(T - 1);
  const auto nx = nominal.x.front().size();
  const auto nu = nominal.u.empty() ? 0 : nominal.u.front().size();
  for (int k = 0; k < T; ++k) {
    Vec ext = Vec::Zero(nx);
    for (const Mat& blk : resp.phi_x[k]) ext += blk.rowwise().norm();
    tube.state_extent[k] = std::move(ext);
    if (k < T - 1) {
      Vec ue = Vec::Zero(nu);
      for (const Mat& blk : resp.phi_u[k]) ue += blk.rowwise().norm();
      tube.control_extent[k] = std::move(ue);
    }
  }
  return tube;
}

double tighten(const ConstraintSpec& c, const SystemResponse& resp, const Vec& z,
               const Vec& v, int k) {
  require(k >= 0 && k < resp.horizon(), "tighten: step out of range");
  Vec gx, gu;
  c.grad(z, v, gx, gu);
  double sum = 0.0;
  for (std::size_t j = 0; j < resp.phi_x[k].size(); ++j) {
    const double state_part = (gx.transpose() * resp.phi_x[k][j]).squaredNorm();
    const double ctrl_part =
        c.uses_control ? (gu.transpose() * resp.phi_u[k][j]).squaredNorm() : 0.0;
    sum += std::sqrt(state_part + ctrl_part);
  }
  return sum + c.g(z, v) + c.b;
}

SystemResponse riccati_phi(const LtvModel& ltv, const Mat& P_term, const Mat& Q,
                           const Mat& R) {
  ltv.validate();
  const int T = ltv.horizon();
  // Backward Riccati pass. K[k] is the feedback applied to the deviation at
  // state k; the terminal row reuses the held terminal P with the last
  // transition's (A, B) so every state with incoming disturbance also has a
  // control-response row for tightening.
  std::vector<Mat> K(T);
  Mat P = 0.5 * (P_term + P_term.transpose());
  auto gain = [&](const Mat& A, const Mat& B) {
    const Mat S = R + B.transpose() * P * B;
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("riccati_phi: innovation matrix lost positive definiteness");
    }
    return Mat(-llt.solve(B.transpose() * P * A));
  };
  if (T >= 2) K[T - 1] = gain(ltv.A[T - 2], ltv.B[T - 2]);
  for (int k = T - 2; k >= 0; --k) {
    K[k] = gain(ltv.A[k], ltv.B[k]);
    P = Q + ltv.A[k].transpose() * P * (ltv.A[k] + ltv.B[k] * K[k]);
    P = 0.5 * (P + P.transpose());
  }

  SystemResponse resp;
  resp.phi_x.resize(T);
  resp.phi_u.resize(T);
  for (int k = 1; k < T; ++k) {
    resp.phi_x[k].resize(k);
    resp.phi_u[k].resize(k);
    for (int j = 0; j < k; ++j) {
      resp.phi_x[k][j] = (j == k - 1)
                             ? ltv.E[j]
                             : Mat((ltv.A[k - 1] + ltv.B[k - 1] * K[k - 1]) *
                                   resp.phi_x[k - 1][j]);
      resp.phi_u[k][j] = K[k] * resp.phi_x[k][j];
    }
  }
  return resp;
}

ScpResult scp_subproblem(const Trajectory& nominal, const LtvModel& ltv,
                         const SystemResponse& resp,
                         const std::vector<ConstraintSpec>& constraints,
                         const QuadCost& cost, const Vec& x0,
                         const std::vector<Vec>& fhat, double trust_radius,
                         const qp::QpOptions& qp_options) {
  ltv.validate();
  const int T = ltv.horizon();
  require(T >= 2, "scp_subproblem: horizon must have at least one transition");
  require(static_cast<int>(nominal.x.size()) == T, "scp_subproblem: nominal states");
  require(static_cast<int>(nominal.u.size()) == T - 1,
          "scp_subproblem: nominal controls");
  require(static_cast<int>(fhat.size()) == T - 1, "scp_subproblem: fhat length");
  require(trust_radius > 0.0, "scp_subproblem: trust radius must be positive");
  const auto nx = nominal.x.front().size();
  const auto nu = nominal.u.front().size();
  const Eigen::Index dim = (T - 1) * (nx + nu);
  require(cost.H.rows() == dim && cost.H.cols() == dim && cost.g.size() == dim,
          "scp_subproblem: cost dimension mismatch");
  const auto zi = [&](int k) { return (k - 1) * nx; };             // dz_k, k >= 1
  const auto vi = [&](int k) { return (T - 1) * nx + k * nu; };    // dv_k

  const Vec dz0 = x0 - nominal.x.front();

  // Dynamics equalities: dz_{k+1} - A_k dz_k - B_k dv_k = fhat_k - z_{k+1},
  // with the fixed dz_0 folded into the first right-hand side.
  Mat A_eq = Mat::Zero((T - 1) * nx, dim);
  Vec b_eq((T - 1) * nx);
  for (int k = 0; k < T - 1; ++k) {
    A_eq.block(k * nx, zi(k + 1), nx, nx) = Mat::Identity(nx, nx);
    A_eq.block(k * nx, vi(k), nx, nu) = -ltv.B[k];
    Vec rhs = fhat[k] - nominal.x[k + 1];
    if (k == 0) {
      rhs += ltv.A[0] * dz0;
    } else {
      A_eq.block(k * nx, zi(k), nx, nx) -= ltv.A[k];
    }
    b_eq.segment(k * nx, nx) = rhs;
  }

  // Tightened constraint rows (margins frozen at the current nominal) plus
  // the trust-region box.
  std::vector<Vec> rows;
  std::vector<double> rhs;
  Vec gx, gu;
  for (const ConstraintSpec& c : constraints) {
    const int k_max = c.uses_control ? T - 2 : T - 1;
    const int k_min = c.uses_control ? 0 : 1;
    for (int k = k_min; k <= k_max; ++k) {
      const Vec& v_at = c.uses_control ? nominal.u[k] : Vec(Vec::Zero(nu));
      const double margin = tighten(c, resp, nominal.x[k], v_at, k);
      c.grad(nominal.x[k], v_at, gx, gu);
      Vec row = Vec::Zero(dim);
      double b_row = -margin;
      if (k >= 1) {
        row.segment(zi(k), nx) = gx;
      } else {
        b_row -= gx.dot(dz0);  // dz_0 is a constant
      }
      if (c.uses_control) row.segment(vi(k), nu) = gu;
      if (row.norm() == 0.0) {
        // Constant row: satisfied rows carry no information, but a violated
        // one makes the whole subproblem infeasible (no update can fix it).
        if (b_row < -1e-9) return ScpResult{};
        continue;
      }
      rows.push_back(std::move(row));
      rhs.push_back(b_row);
    }
  }
  for (Eigen::Index i = 0; i < dim; ++i) {
    Vec row = Vec::Zero(dim);
    row(i) = 1.0;
    rows.push_back(row);
    rhs.push_back(trust_radius);
    row(i) = -1.0;
    rows.push_back(std::move(row));
    rhs.push_back(trust_radius);
  }
  Mat A_in(static_cast<Eigen::Index>(rows.size()), dim);
  Vec b_in(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    A_in.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    b_in(static_cast<Eigen::Index>(i)) = rhs[i];
  }

  const qp::QpResult sol = qp::solve_qp(cost.H, cost.g, A_eq, b_eq, A_in, b_in,
                                        qp_options);
  ScpResult out;
  out.status = sol.status == qp::QpStatus::Optimal    ? ScpStatus::Optimal
               : sol.status == qp::QpStatus::MaxIter  ? ScpStatus::MaxIter
                                                      : ScpStatus::Infeasible;
  if (out.status == ScpStatus::Infeasible) return out;
  out.objective = 0.5 * sol.x.dot(cost.H * sol.x) + cost.g.dot(sol.x);
  out.dz.resize(T);
  out.dz[0] = dz0;
  for (int k = 1; k < T; ++k) out.dz[k] = sol.x.segment(zi(k), nx);
  out.dv.resize(T - 1);
  for (int k = 0; k < T - 1; ++k) out.dv[k] = sol.x.segment(vi(k), nu);
  return out;
}

void dump_response_json(const LtvModel& ltv, const SystemResponse& resp,
                        const Trajectory& nominal, const std::string& path) {
  nlohmann::json doc;
  doc["residual"] = response_residual(ltv, resp);
  auto blocks = nlohmann::json::array();
  for (int k = 0; k < resp.horizon(); ++k) {
    for (std::size_t j = 0; j < resp.phi_x[k].size(); ++j) {
      nlohmann::json blk;
      blk["k"] = k;
      blk["j"] = j;
      blk["phi_x"] = std::vector<double>(
          resp.phi_x[k][j].data(),
          resp.phi_x[k][j].data() + resp.phi_x[k][j].size());
      blk["phi_u"] = std::vector<double>(
          resp.phi_u[k][j].data(),
          resp.phi_u[k][j].data() + resp.phi_u[k][j].size());
      blocks.push_back(std::move(blk));
    }
  }
  doc["blocks"] = std::move(blocks);
  const Tube tube = tube_extents(resp, nominal);
  auto extents = nlohmann::json::array();
  for (const Vec& e : tube.state_extent) {
    extents.push_back(std::vector<double>(e.data(), e.data() + e.size()));
  }
  doc["state_extent"] = std::move(extents);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_response_json: cannot open " + path);
  out << doc.dump(2) << '\n';
}

}  // namespace cpsls::sls
