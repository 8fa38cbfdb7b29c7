#include "cpsls/theory.hpp"

#include <boost/math/distributions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <random>
#include <stdexcept>

#include "cpsls/conformal.hpp"

namespace cpsls::theory {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double simpson_rec(const std::function<double(double)>& f, double a, double b,
                   double fa, double fm, double fb, double whole, double tol,
                   int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 32);
}

void sample_disk(std::mt19937_64& rng, double& x, double& y) {
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double r = std::sqrt(ud(rng));
  const double ang = 2.0 * M_PI * ud(rng);
  x = r * std::cos(ang);
  y = r * std::sin(ang);
}

}  // namespace

double tv_between(const std::function<double(double)>& p,
                  const std::function<double(double)>& q, double lo, double hi,
                  double tol) {
  if (!(hi > lo)) throw std::invalid_argument("tv_between: empty window");
  auto diff = [&](double x) { return std::abs(p(x) - q(x)); };
  // Log-spaced panels concentrate nodes near the lower end, where gamma-type
  // densities vary fastest.
  const bool geometric = lo > 0.0 && hi / lo > 10.0;
  const int panels = geometric ? 48 : 16;
  double total = 0.0;
  double a = lo;
  for (int i = 1; i <= panels; ++i) {
    const double t = static_cast<double>(i) / panels;
    const double b = geometric ? lo * std::pow(hi / lo, t) : lo + (hi - lo) * t;
    total += adaptive_simpson(diff, a, b, tol / panels);
    a = b;
  }
  const double tv = 0.5 * total;
  if (!std::isfinite(tv)) throw std::runtime_error("tv_between: quadrature failed");
  return tv;
}

double tv_numeric(const GammaSpec& p, const GammaSpec& q) {
  if (!(p.shape > 0 && p.scale > 0 && q.shape > 0 && q.scale > 0)) {
    throw std::invalid_argument("tv_numeric: gamma parameters must be positive");
  }
  if (p.shape == q.shape && p.scale == q.scale) return 0.0;
  const boost::math::gamma_distribution<double> gp(p.shape, p.scale);
  const boost::math::gamma_distribution<double> gq(q.shape, q.scale);
  const double lo = std::max(
      {1e-300, std::min(quantile(gp, 1e-14), quantile(gq, 1e-14))});
  const double hi = std::max(quantile(gp, 1.0 - 1e-10), quantile(gq, 1.0 - 1e-10));
  return tv_between([&](double x) { return pdf(gp, x); },
                    [&](double x) { return pdf(gq, x); }, lo, hi, 1e-7);
}

LipschitzEstimate lipschitz_estimate(
    const std::function<GammaSpec(double, double)>& field, int pairs,
    std::uint64_t seed) {
  if (pairs < 1) throw std::invalid_argument("lipschitz_estimate: pairs must be >= 1");
  auto rng = make_rng(seed, 91);
  LipschitzEstimate est;
  for (int i = 0; i < pairs; ++i) {
    double x1, y1, x2, y2;
    sample_disk(rng, x1, y1);
    sample_disk(rng, x2, y2);
    const double dist = std::hypot(x1 - x2, y1 - y2);
    if (dist < 1e-12) continue;
    const double tv = tv_numeric(field(x1, y1), field(x2, y2));
    est.epsilon = std::max(est.epsilon, tv / dist);
    ++est.pairs_used;
  }
  return est;
}

LipschitzEstimate lipschitz_estimate_density(const DensityField& field, int pairs,
                                             std::uint64_t seed) {
  if (pairs < 1) throw std::invalid_argument("lipschitz_estimate: pairs must be >= 1");
  auto rng = make_rng(seed, 91);
  LipschitzEstimate est;
  for (int i = 0; i < pairs; ++i) {
    double x1, y1, x2, y2;
    sample_disk(rng, x1, y1);
    sample_disk(rng, x2, y2);
    const double dist = std::hypot(x1 - x2, y1 - y2);
    if (dist < 1e-12) continue;
    const double tv = tv_between(field.density(x1, y1), field.density(x2, y2),
                                 field.lo, field.hi);
    est.epsilon = std::max(est.epsilon, tv / dist);
    ++est.pairs_used;
  }
  return est;
}

GapBoundReport gap_bounds(std::vector<double> distances, double rho, double epsilon,
                          const std::vector<double>* tv_values) {
  if (distances.empty()) throw std::invalid_argument("gap_bounds: no distances");
  if (!(rho > 0.0 && rho < 1.0)) {
    throw std::invalid_argument("gap_bounds: rho must lie in (0, 1)");
  }
  if (epsilon < 0.0) throw std::invalid_argument("gap_bounds: negative epsilon");
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (distances[i] < 0.0) throw std::invalid_argument("gap_bounds: negative distance");
    if (i > 0 && distances[i] < distances[i - 1]) {
      throw std::invalid_argument("gap_bounds: distances must be sorted ascending");
    }
  }
  if (tv_values && tv_values->size() != distances.size()) {
    throw std::invalid_argument("gap_bounds: tv list length mismatch");
  }

  GapBoundReport rep;
  rep.rho = rho;
  rep.epsilon = epsilon;

  const std::size_t n = distances.size();
  double total = 0.0;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::pow(rho, distances[i]);
    total += w[i];
  }
  double tight = 0.0, exact = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double wt = w[i] / (1.0 + total);
    tight += wt * 2.0 * epsilon * distances[i];
    if (tv_values) exact += wt * 2.0 * (*tv_values)[i];
  }
  rep.tight = tight;
  if (tv_values) rep.exact = exact;

  if (n >= 2) {
    double d_min = kInf, d_max = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double gap = distances[i + 1] - distances[i];
      d_min = std::min(d_min, gap);
      d_max = std::max(d_max, gap);
    }
    if (d_min <= 0.0) {
      // Tied distances collapse the geometric bounding series; the
      // closed-form bounds degenerate to +inf.
      rep.interpretable = kInf;
      rep.asymptotic = kInf;
    } else {
      const double r_min = std::pow(rho, d_min);
      const double bracket = distances.front() / (1.0 - r_min) +
                             d_max * r_min / ((1.0 - r_min) * (1.0 - r_min));
      rep.interpretable = 2.0 * epsilon * bracket;
      rep.asymptotic = 2.0 * epsilon * bracket * (1.0 - std::pow(rho, d_max));
    }
  }
  rep.distances = std::move(distances);
  return rep;
}

double tube_gap(double epsilon_hat, const sls::Tube& tube) {
  if (epsilon_hat < 0.0) throw std::invalid_argument("tube_gap: negative epsilon");
  double extent = 0.0;
  for (const Vec& e : tube.state_extent) {
    if (e.size() > 0) extent = std::max(extent, e.maxCoeff());
  }
  for (const Vec& e : tube.control_extent) {
    if (e.size() > 0) extent = std::max(extent, e.maxCoeff());
  }
  return 2.0 * epsilon_hat * (2.0 * extent);
}

double total_miscoverage(const std::vector<double>& alpha,
                         const std::vector<double>& gap_terms,
                         const std::vector<double>& tube_gaps) {
  if (alpha.size() != gap_terms.size() || alpha.size() != tube_gaps.size()) {
    throw std::invalid_argument("total_miscoverage: list length mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    total += alpha[k] + gap_terms[k] + tube_gaps[k];
  }
  return total;
}

GammaSpec toy_field(double x, double y) {
  const double r = std::hypot(x, y);
  return {std::max(0.1, 5.0 - std::pow(r, 0.8) / 3.0), 2.0};
}

namespace {

struct ToyShared {
  std::vector<double> tv_cache;  // radius grid [0, 1]
  double epsilon{0.0};

  [[nodiscard]] double tv_at(double r) const {
    const double pos = std::clamp(r, 0.0, 1.0) * (tv_cache.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= tv_cache.size()) return tv_cache.back();
    const double frac = pos - static_cast<double>(i);
    return (1.0 - frac) * tv_cache[i] + frac * tv_cache[i + 1];
  }
};

ToyCell run_toy_cell(const ToyConfig& cfg, const ToyShared& shared, double rho,
                     int n_calib, std::uint64_t stream) {
  auto rng = make_rng(cfg.seed, stream);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const GammaSpec origin = toy_field(0.0, 0.0);
  const Mat eye = Mat::Identity(1, 1);
  const Vec z = Vec::Zero(2);
  const Vec v_empty(0);

  ToyCell cell;
  cell.rho = rho;
  cell.n_calib = n_calib;
  int covered = 0, infinite = 0;
  double barber_sum = 0.0, tight_sum = 0.0;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    conformal::ErrorSet set;
    set.rho = rho;
    std::vector<double> radii(n_calib);
    for (int i = 0; i < n_calib; ++i) {
      double px, py;
      sample_disk(rng, px, py);
      radii[i] = std::hypot(px, py);
      const GammaSpec spec = toy_field(px, py);
      std::gamma_distribution<double> gd(spec.shape, spec.scale);
      Vec x(2), r(1);
      x << px, py;
      r << gd(rng);
      set.append({x, v_empty, std::move(r)});
    }
    const auto q = conformal::calibrate(set, eye, z, v_empty, cfg.alpha);
    std::gamma_distribution<double> gtest(origin.shape, origin.scale);
    const double s_test = gtest(rng);
    if (q.infinite) {
      ++infinite;
      ++covered;  // an infinite radius covers every score
    } else if (s_test <= q.value) {
      ++covered;
    }

    const auto wv = conformal::weights(set, z, v_empty);
    double barber_gap = 0.0;
    for (std::size_t i = 0; i < wv.w.size(); ++i) {
      barber_gap += wv.w[i] * 2.0 * shared.tv_at(radii[wv.index[i]]);
    }
    barber_sum += barber_gap;

    std::sort(radii.begin(), radii.end());
    tight_sum += gap_bounds(radii, rho, shared.epsilon).tight;
  }
  cell.coverage = static_cast<double>(covered) / cfg.trials;
  cell.infinite_rate = static_cast<double>(infinite) / cfg.trials;
  cell.barber_bound = 1.0 - cfg.alpha - barber_sum / cfg.trials;
  cell.cpsls_bound = 1.0 - cfg.alpha - tight_sum / cfg.trials;
  return cell;
}

}  // namespace

std::vector<ToyCell> toy_experiment(const ToyConfig& cfg) {
  if (cfg.trials < 1) throw std::invalid_argument("toy_experiment: trials must be >= 1");
  ToyShared shared;
  shared.tv_cache.resize(static_cast<std::size_t>(cfg.tv_cache_size) + 1);
  const GammaSpec origin = toy_field(0.0, 0.0);
  for (std::size_t i = 0; i < shared.tv_cache.size(); ++i) {
    const double r = static_cast<double>(i) / cfg.tv_cache_size;
    shared.tv_cache[i] = tv_numeric(toy_field(r, 0.0), origin);
  }
  shared.epsilon = lipschitz_estimate(
      [](double x, double y) { return toy_field(x, y); }, cfg.epsilon_pairs,
      cfg.seed).epsilon;

  std::vector<std::future<ToyCell>> jobs;
  std::uint64_t stream = 100;
  for (double rho : cfg.rho) {
    for (int n : cfg.n_calib) {
      jobs.push_back(std::async(std::launch::async, run_toy_cell, std::cref(cfg),
                                std::cref(shared), rho, n, stream++));
    }
  }
  std::vector<ToyCell> cells;
  cells.reserve(jobs.size());
  for (auto& job : jobs) cells.push_back(job.get());
  return cells;
}

void write_toy_csv(const std::vector<ToyCell>& cells, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_toy_csv: cannot open " + path);
  out.precision(10);
  out << "rho,n_calib,coverage,barber_bound,cpsls_bound,infinite_rate\n";
  for (const ToyCell& c : cells) {
    out << c.rho << ',' << c.n_calib << ',' << c.coverage << ',' << c.barber_bound
        << ',' << c.cpsls_bound << ',' << c.infinite_rate << '\n';
  }
}

WeightHistogram weight_histogram(int n_calib, double rho, int trials, int bins,
                                 std::uint64_t seed) {
  if (n_calib < 1 || trials < 1 || bins < 1) {
    throw std::invalid_argument("weight_histogram: positive sizes required");
  }
  auto rng = make_rng(seed, 7);
  WeightHistogram hist;
  hist.rho = rho;
  hist.n_calib = n_calib;
  hist.bin_mass.assign(bins, 0.0);
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<double> radii(n_calib);
    double total = 0.0;
    for (double& r : radii) {
      double x, y;
      sample_disk(rng, x, y);
      r = std::hypot(x, y);
      total += std::pow(rho, r);
    }
    for (double r : radii) {
      const int b = std::min(bins - 1, static_cast<int>(r * bins));
      hist.bin_mass[b] += std::pow(rho, r) / (1.0 + total) / trials;
    }
    hist.test_mass += 1.0 / (1.0 + total) / trials;
  }
  return hist;
}

void write_weight_histograms_csv(const std::vector<WeightHistogram>& rows,
                                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_weight_histograms_csv: cannot open " + path);
  out.precision(10);
  out << "rho,n_calib,bin_lo,bin_hi,mass\n";
  for (const WeightHistogram& h : rows) {
    const int bins = static_cast<int>(h.bin_mass.size());
    for (int b = 0; b < bins; ++b) {
      out << h.rho << ',' << h.n_calib << ',' << static_cast<double>(b) / bins << ','
          << static_cast<double>(b + 1) / bins << ',' << h.bin_mass[b] << '\n';
    }
    out << h.rho << ',' << h.n_calib << ",inf,inf," << h.test_mass << '\n';
  }
}

}  // namespace cpsls::theory
