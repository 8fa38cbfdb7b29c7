#include "cpsls/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace cpsls::conformal {
namespace {

constexpr std::uint32_t kMagic = 0x43504552;  // "CPER"
constexpr std::uint32_t kVersion = 1;

// Absolute slack for cumulative-weight comparisons.  Summing thousands of
// weights leaves O(1e-13) of rounding debt; without slack a level like 0.9
// could miss a cumulative mass of 0.3+0.3+0.3 by one ulp and spuriously
// report an infinite quantile.
constexpr double kLevelSlack = 1e-12;

Vec concat(const Vec& z, const Vec& v) {
  Vec q(z.size() + v.size());
  q << z, v;
  return q;
}

void check_shape(const ErrorSet& set, const Vec& z, const Vec& v) {
  if (set.points.empty()) return;
  if (set.points.front().x.size() != z.size() ||
      set.points.front().u.size() != v.size()) {
    throw std::invalid_argument("conformal: query dimension mismatch");
  }
}

}  // namespace

void ErrorSet::append(CalibPoint pt) {
  require_finite(pt.x, "calibration x");
  require_finite(pt.u, "calibration u");
  require_finite(pt.residual, "calibration residual");
  if (!points.empty() && (points.front().x.size() != pt.x.size() ||
                          points.front().u.size() != pt.u.size() ||
                          points.front().residual.size() != pt.residual.size())) {
    throw std::invalid_argument("ErrorSet::append: dimension mismatch");
  }
  points.push_back(std::move(pt));
}

double score(const Mat& L, const Vec& residual) {
  if (L.rows() != L.cols() || L.rows() != residual.size()) {
    throw std::invalid_argument("score: dimension mismatch");
  }
  if ((L.diagonal().array() <= 0.0).any()) {
    throw std::invalid_argument("score: Cholesky factor must have positive diagonal");
  }
  return L.triangularView<Eigen::Lower>().solve(residual).norm();
}

WeightVector weights(const ErrorSet& set, const Vec& z, const Vec& v) {
  if (!(set.rho > 0.0 && set.rho <= 1.0)) {
    throw std::invalid_argument("weights: rho must lie in (0, 1]");
  }
  check_shape(set, z, v);
  const Vec query = concat(z, v);
  const int n = set.count();

  std::vector<double> raw(n);
  double total = 0.0;
  const double log_rho = std::log(set.rho);
  for (int i = 0; i < n; ++i) {
    const double d = (concat(set.points[i].x, set.points[i].u) - query).norm();
    raw[i] = std::exp(log_rho * d);
    total += raw[i];
  }

  WeightVector out;
  out.w_test = 1.0 / (1.0 + total);

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (set.nearest_subset > 0 && n > set.nearest_subset) {
    // Keep the largest-weight (nearest) atoms; the dropped mass is never
    // credited to a finite score, which can only enlarge the quantile.
    std::nth_element(idx.begin(), idx.begin() + set.nearest_subset, idx.end(),
                     [&](int a, int b) { return raw[a] > raw[b]; });
    idx.resize(set.nearest_subset);
    std::sort(idx.begin(), idx.end());
  }

  out.index = std::move(idx);
  out.w.reserve(out.index.size());
  for (int i : out.index) out.w.push_back(raw[i] / (1.0 + total));
  return out;
}

QuantileResult weighted_quantile(std::span<const double> scores,
                                 const WeightVector& wv, double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw std::invalid_argument("weighted_quantile: level must lie in (0, 1)");
  }
  if (scores.size() != wv.w.size()) {
    throw std::invalid_argument("weighted_quantile: score/weight length mismatch");
  }
  double mass = wv.w_test;
  for (double w : wv.w) {
    if (w < 0.0) throw std::invalid_argument("weighted_quantile: negative weight");
    mass += w;
  }
  if (mass > 1.0 + 1e-10) {
    throw std::invalid_argument("weighted_quantile: weights exceed unit mass");
  }

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });

  double cum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    if (!std::isfinite(s)) break;
    // Accumulate every atom tied at this score before testing the level.
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == s) cum += wv.w[order[j++]];
    if (cum >= level - kLevelSlack) return {s, false};
    i = j;
  }
  return {std::numeric_limits<double>::infinity(), true};
}

QuantileResult calibrate(const ErrorSet& set, const Mat& L, const Vec& z,
                         const Vec& v, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("calibrate: alpha must lie in (0, 1)");
  }
  WeightVector wv = weights(set, z, v);
  std::vector<double> s(wv.index.size());
  for (std::size_t i = 0; i < wv.index.size(); ++i) {
    s[i] = score(L, set.points[wv.index[i]].residual);
  }
  return weighted_quantile(s, wv, 1.0 - alpha);
}

QuantileResult ball_variant(const ErrorSet& set, const Vec& z, const Vec& v,
                            double alpha) {
  if (set.points.empty()) return {std::numeric_limits<double>::infinity(), true};
  const auto n = set.points.front().residual.size();
  return calibrate(set, Mat::Identity(n, n), z, v, alpha);
}

double max_finite_score(const ErrorSet& set, const Mat& L, const Vec& z,
                        const Vec& v) {
  WeightVector wv = weights(set, z, v);
  if (wv.index.empty()) {
    throw std::invalid_argument("max_finite_score: empty calibration set");
  }
  double best = 0.0;
  for (int i : wv.index) best = std::max(best, score(L, set.points[i].residual));
  return best;
}

Mat v_matrix(const QuantileResult& q, const Mat& L) {
  if (q.infinite) {
    throw std::domain_error("v_matrix: quantile is infinite");
  }
  return q.value * L;
}

Membership contains(const EllipsoidErrorSet& set, const Vec& y) {
  const double s = score(set.L, y - set.center);
  return {s - set.q <= 0.0, s - set.q};
}

void online_update(ErrorSet& set, const Vec& x, const Vec& u, const Vec& next_true,
                   const models::MlpParams& dyn_model) {
  Vec residual = next_true - models::mlp_forward(dyn_model, x, u);
  set.append({x, u, std::move(residual)});
}

void save_error_set(const ErrorSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_error_set: cannot open " + path);
  const std::uint32_t nx = set.points.empty()
                               ? 0u
                               : static_cast<std::uint32_t>(set.points.front().x.size());
  const std::uint32_t nu = set.points.empty()
                               ? 0u
                               : static_cast<std::uint32_t>(set.points.front().u.size());
  const std::uint64_t count = set.points.size();
  auto put32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  put32(kMagic);
  put32(kVersion);
  put32(nx);
  put32(nu);
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto& p : set.points) {
    out.write(reinterpret_cast<const char*>(p.x.data()), 8 * p.x.size());
    out.write(reinterpret_cast<const char*>(p.u.data()), 8 * p.u.size());
    out.write(reinterpret_cast<const char*>(p.residual.data()), 8 * p.residual.size());
  }
  if (!out) throw std::runtime_error("save_error_set: write failed for " + path);
}

ErrorSet load_error_set(const std::string& path, double rho) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_error_set: cannot open " + path);
  auto get32 = [&] {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  if (get32() != kMagic || get32() != kVersion) {
    throw std::runtime_error("load_error_set: unrecognized file format: " + path);
  }
  const std::uint32_t nx = get32();
  const std::uint32_t nu = get32();
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  ErrorSet set;
  set.rho = rho;
  set.points.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CalibPoint p{Vec(nx), Vec(nu), Vec(nx)};
    in.read(reinterpret_cast<char*>(p.x.data()), 8 * nx);
    in.read(reinterpret_cast<char*>(p.u.data()), 8 * nu);
    in.read(reinterpret_cast<char*>(p.residual.data()), 8 * nx);
    if (!in) throw std::runtime_error("load_error_set: truncated file: " + path);
    set.points.push_back(std::move(p));
  }
  return set;
}

}  // namespace cpsls::conformal
