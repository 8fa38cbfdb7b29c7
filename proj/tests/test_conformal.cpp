#include "cpsls/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <vector>

#include "cpsls/models.hpp"
#include "doctest.h"

using namespace cpsls;
using namespace cpsls::conformal;

namespace {

// Independent quantile oracle: for every candidate threshold, re-sum the mass
// of all atoms at or below it from scratch (no shared accumulator with the
// library path).
QuantileResult oracle_quantile(const std::vector<double>& scores,
                               const std::vector<double>& w, double level) {
  std::vector<double> cand = scores;
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  for (double t : cand) {
    double mass = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] <= t) mass += w[i];
    }
    if (mass >= level - 1e-12) return {t, false};
  }
  return {std::numeric_limits<double>::infinity(), true};
}

// Full-pipeline oracle for calibrate(): recomputes distances, weights and
// Mahalanobis scores with dense inverses instead of triangular solves.
QuantileResult oracle_calibrate(const ErrorSet& set, const Mat& L, const Vec& z,
                                const Vec& v, double alpha) {
  const Mat inv = L.inverse();
  std::vector<double> w, s;
  double total = 0.0;
  for (const auto& p : set.points) {
    Vec dz = p.x - z;
    Vec dv = p.u - v;
    const double d = std::sqrt(dz.squaredNorm() + dv.squaredNorm());
    w.push_back(std::pow(set.rho, d));
    total += w.back();
    s.push_back((inv * p.residual).norm());
  }
  for (double& wi : w) wi /= 1.0 + total;
  return oracle_quantile(s, w, 1.0 - alpha);
}

Mat random_chol(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Mat a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = nd(rng);
  Mat sigma = a * a.transpose() + Mat::Identity(n, n);
  return Eigen::LLT<Mat>(sigma).matrixL();
}

Vec random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

ErrorSet random_set(int count, int nx, int nu, double rho, std::mt19937_64& rng) {
  ErrorSet set;
  set.rho = rho;
  for (int i = 0; i < count; ++i) {
    set.append({random_vec(nx, rng, 2.0), random_vec(nu, rng, 2.0),
                random_vec(nx, rng, 1.5)});
  }
  return set;
}

}  // namespace

TEST_CASE("nonconformity score is the Mahalanobis norm") {
  SUBCASE("zero residual scores zero") {
    auto rng = make_rng(11, 0);
    for (int n = 1; n <= 4; ++n) {
      Mat L = random_chol(n, rng);
      CHECK(score(L, Vec::Zero(n)) == 0.0);
    }
  }
  SUBCASE("identity shape reduces to the Euclidean norm") {
    Vec r(3);
    r << 1.0, -2.0, 2.0;
    CHECK(score(Mat::Identity(3, 3), r) == doctest::Approx(3.0).epsilon(1e-14));
  }
  SUBCASE("diagonal covariance rescales per axis") {
    Mat L = Mat::Zero(2, 2);
    L(0, 0) = 2.0;  // Sigma = diag(4, 1)
    L(1, 1) = 1.0;
    Vec r(2);
    r << 2.0, 0.0;
    CHECK(score(L, r) == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("scaling residual and factor together cancels") {
    auto rng = make_rng(11, 1);
    for (int rep = 0; rep < 50; ++rep) {
      Mat L = random_chol(3, rng);
      Vec r = random_vec(3, rng);
      const double c = 0.1 + 5.0 * std::abs(random_vec(1, rng)(0));
      CHECK(score(c * L, c * r) == doctest::Approx(score(L, r)).epsilon(1e-10));
    }
  }
  SUBCASE("shape and positivity violations are rejected") {
    CHECK_THROWS_AS((void)score(Mat::Identity(2, 2), Vec::Zero(3)),
                    std::invalid_argument);
    Mat bad = Mat::Identity(2, 2);
    bad(1, 1) = 0.0;
    CHECK_THROWS_AS((void)score(bad, Vec::Zero(2)), std::invalid_argument);
  }
}

TEST_CASE("distance-decay weights") {
  SUBCASE("single point at the query splits mass evenly with the test atom") {
    ErrorSet set;
    set.rho = 0.97;
    Vec x(2), u(1);
    x << 1.0, 2.0;
    u << 0.5;
    set.append({x, u, Vec::Zero(2)});
    WeightVector wv = weights(set, x, u);
    REQUIRE(wv.w.size() == 1);
    CHECK(wv.w[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(wv.w_test == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("unit distance decays by one power of rho") {
    ErrorSet set;
    set.rho = 0.97;
    Vec x(1), u(1);
    x << 1.0;
    u << 0.0;
    set.append({x, u, Vec::Zero(1)});
    Vec z(1);
    z << 0.0;
    WeightVector wv = weights(set, z, u);
    // Unnormalized weight recovers as the ratio against the unit test atom.
    CHECK(wv.w[0] / wv.w_test == doctest::Approx(0.97).epsilon(1e-14));
  }
  SUBCASE("three points at distances 0,1,2 with rho=1/2") {
    ErrorSet set;
    set.rho = 0.5;
    Vec u(1);
    u << 0.0;
    for (double d : {0.0, 1.0, 2.0}) {
      Vec x(1);
      x << d;
      set.append({x, u, Vec::Zero(1)});
    }
    Vec z(1);
    z << 0.0;
    WeightVector wv = weights(set, z, u);
    const double norm = 1.0 + 1.0 + 0.5 + 0.25;
    CHECK(wv.w[0] == doctest::Approx(1.0 / norm).epsilon(1e-14));
    CHECK(wv.w[1] == doctest::Approx(0.5 / norm).epsilon(1e-14));
    CHECK(wv.w[2] == doctest::Approx(0.25 / norm).epsilon(1e-14));
    CHECK(wv.w_test == doctest::Approx(1.0 / norm).epsilon(1e-14));
  }
  SUBCASE("closer points always outweigh farther ones when rho < 1") {
    auto rng = make_rng(12, 0);
    ErrorSet set = random_set(20, 2, 1, 0.8, rng);
    Vec z = random_vec(2, rng), v = random_vec(1, rng);
    WeightVector wv = weights(set, z, v);
    std::vector<std::pair<double, double>> by_dist;  // (distance, weight)
    for (std::size_t i = 0; i < wv.w.size(); ++i) {
      const auto& p = set.points[wv.index[i]];
      const double d = std::sqrt((p.x - z).squaredNorm() + (p.u - v).squaredNorm());
      by_dist.emplace_back(d, wv.w[i]);
    }
    std::sort(by_dist.begin(), by_dist.end());
    for (std::size_t i = 1; i < by_dist.size(); ++i) {
      CHECK(by_dist[i - 1].second > by_dist[i].second);
    }
  }
  SUBCASE("rho = 1 gives uniform weights") {
    auto rng = make_rng(12, 1);
    ErrorSet set = random_set(7, 2, 1, 1.0, rng);
    WeightVector wv = weights(set, random_vec(2, rng), random_vec(1, rng));
    for (double w : wv.w) CHECK(w == doctest::Approx(1.0 / 8).epsilon(1e-14));
    CHECK(wv.w_test == doctest::Approx(1.0 / 8).epsilon(1e-14));
  }
  SUBCASE("rho outside (0,1] is rejected") {
    auto rng = make_rng(12, 2);
    ErrorSet set = random_set(3, 1, 1, 0.5, rng);
    Vec z(1), v(1);
    z.setZero();
    v.setZero();
    for (double rho : {0.0, -0.3, 1.5}) {
      set.rho = rho;
      CHECK_THROWS_AS((void)weights(set, z, v), std::invalid_argument);
    }
  }
}

TEST_CASE("weighted quantile over the augmented distribution") {
  SUBCASE("all-zero scores at the median") {
    WeightVector wv;
    wv.w = {0.25, 0.25, 0.25};
    wv.index = {0, 1, 2};
    wv.w_test = 0.25;
    std::vector<double> s = {0.0, 0.0, 0.0};
    auto q = weighted_quantile(s, wv, 0.5);
    CHECK_FALSE(q.infinite);
    CHECK(q.value == 0.0);
  }
  SUBCASE("cumulative sums 0.3/0.6/0.9 against levels") {
    WeightVector wv;
    wv.w = {0.3, 0.3, 0.3};
    wv.index = {0, 1, 2};
    wv.w_test = 0.1;
    std::vector<double> s = {1.0, 2.0, 3.0};
    auto q90 = weighted_quantile(s, wv, 0.9);
    CHECK_FALSE(q90.infinite);
    CHECK(q90.value == 3.0);
    auto q95 = weighted_quantile(s, wv, 0.95);
    CHECK(q95.infinite);
    auto q30 = weighted_quantile(s, wv, 0.3);
    CHECK(q30.value == 1.0);
    auto q31 = weighted_quantile(s, wv, 0.31);
    CHECK(q31.value == 2.0);
  }
  SUBCASE("atoms tied at one value accumulate before the comparison") {
    WeightVector wv;
    wv.w = {0.2, 0.2, 0.5};
    wv.index = {0, 1, 2};
    wv.w_test = 0.1;
    std::vector<double> s = {1.0, 1.0, 2.0};
    CHECK(weighted_quantile(s, wv, 0.4).value == 1.0);
    CHECK(weighted_quantile(s, wv, 0.41).value == 2.0);
  }
  SUBCASE("no finite atoms means an infinite quantile") {
    WeightVector wv;
    wv.w_test = 1.0;
    CHECK(weighted_quantile({}, wv, 0.5).infinite);
  }
  SUBCASE("nondecreasing in the level") {
    auto rng = make_rng(13, 0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int rep = 0; rep < 30; ++rep) {
      const int n = 1 + static_cast<int>(ud(rng) * 8);
      WeightVector wv;
      double total = 1.0;  // test atom's unnormalized weight
      std::vector<double> raw(n);
      for (int i = 0; i < n; ++i) {
        raw[i] = ud(rng);
        total += raw[i];
      }
      std::vector<double> s(n);
      for (int i = 0; i < n; ++i) {
        wv.w.push_back(raw[i] / total);
        wv.index.push_back(i);
        s[i] = std::floor(ud(rng) * 5.0);  // encourage ties
      }
      wv.w_test = 1.0 / total;
      double prev = -1.0;
      for (double level = 0.05; level < 1.0; level += 0.05) {
        auto q = weighted_quantile(s, wv, level);
        const double value =
            q.infinite ? std::numeric_limits<double>::infinity() : q.value;
        CHECK(value >= prev);
        prev = value;
      }
    }
  }
  SUBCASE("invalid inputs are rejected") {
    WeightVector wv;
    wv.w = {0.5};
    wv.index = {0};
    wv.w_test = 0.5;
    std::vector<double> s = {1.0};
    CHECK_THROWS_AS((void)weighted_quantile(s, wv, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)weighted_quantile(s, wv, 1.0), std::invalid_argument);
    CHECK_THROWS_AS((void)weighted_quantile({}, wv, 0.5), std::invalid_argument);
    wv.w = {-0.1};
    CHECK_THROWS_AS((void)weighted_quantile(s, wv, 0.5), std::invalid_argument);
    wv.w = {1.2};  // mass 1.7 with the test atom
    CHECK_THROWS_AS((void)weighted_quantile(s, wv, 0.5), std::invalid_argument);
  }
}

TEST_CASE("calibrate matches an exhaustive re-summation oracle") {
  auto rng = make_rng(14, 0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double rhos[] = {1.0, 0.97, 0.5, 0.1};
  int infinite_seen = 0;
  for (int rep = 0; rep < 300; ++rep) {
    const int n = 1 + static_cast<int>(ud(rng) * 12);
    const int nx = 1 + static_cast<int>(ud(rng) * 3);
    const int nu = 1 + static_cast<int>(ud(rng) * 2);
    ErrorSet set = random_set(n, nx, nu, rhos[rep % 4], rng);
    Mat L = random_chol(nx, rng);
    Vec z = random_vec(nx, rng, 2.0), v = random_vec(nu, rng, 2.0);
    const double alpha = 0.02 + 0.9 * ud(rng);
    auto got = calibrate(set, L, z, v, alpha);
    auto want = oracle_calibrate(set, L, z, v, alpha);
    REQUIRE(got.infinite == want.infinite);
    if (!got.infinite) {
      CHECK(got.value == doctest::Approx(want.value).epsilon(1e-10));
    } else {
      ++infinite_seen;
    }
  }
  CHECK(infinite_seen > 0);

  SUBCASE("all-zero residuals calibrate to a zero radius") {
    ErrorSet set;
    set.rho = 1.0;
    Vec x(1), u(1);
    x.setZero();
    u.setZero();
    for (int i = 0; i < 3; ++i) set.append({x, u, Vec::Zero(2)});
    auto q = calibrate(set, Mat::Identity(2, 2), x, u, 0.5);
    CHECK_FALSE(q.infinite);
    CHECK(q.value == 0.0);
  }
  SUBCASE("a level below the nearest atom's weight returns the smallest score") {
    ErrorSet set;
    set.rho = 0.97;
    Vec x(1), u(1);
    x.setZero();
    u.setZero();
    Vec r(1);
    r << 0.3;
    set.append({x, u, r});  // distance 0: normalized weight 1/2
    auto q = calibrate(set, Mat::Identity(1, 1), x, u, 0.6);  // level 0.4 < 0.5
    CHECK_FALSE(q.infinite);
    CHECK(q.value == doctest::Approx(0.3).epsilon(1e-14));
  }
}

TEST_CASE("uniform-weight calibration covers fresh residuals at the target rate") {
  // rho = 1 reduces to classical split conformal: over many independent
  // (calibration set, test residual) trials the hit rate must sit at or above
  // 1 - alpha, minus binomial noise.
  const int n_cal = 20;
  const int n_trials = 10000;
  const double alpha = 0.2;
  auto rng = make_rng(15, 0);
  std::normal_distribution<double> nd;
  Vec x0 = Vec::Zero(2), u0 = Vec::Zero(1);
  const Mat eye = Mat::Identity(2, 2);
  int hits = 0;
  int finite_q = 0;
  for (int t = 0; t < n_trials; ++t) {
    ErrorSet set;
    set.rho = 1.0;
    for (int i = 0; i < n_cal; ++i) {
      Vec r(2);
      r << nd(rng), nd(rng);
      set.append({x0, u0, r});
    }
    auto q = calibrate(set, eye, x0, u0, alpha);
    Vec fresh(2);
    fresh << nd(rng), nd(rng);
    if (q.infinite) {
      ++hits;  // an infinite radius trivially covers
      continue;
    }
    ++finite_q;
    EllipsoidErrorSet ell{Vec::Zero(2), eye, q.value};
    if (contains(ell, fresh).inside) ++hits;
  }
  CHECK(finite_q == n_trials);  // level 0.8 is reachable with 20/21 finite mass
  const double rate = static_cast<double>(hits) / n_trials;
  const double slack = 3.0 * std::sqrt(alpha * (1 - alpha) / n_trials);
  MESSAGE("coverage ", rate, " target ", 1 - alpha, " slack ", slack);
  CHECK(rate >= 1 - alpha - slack);
}

TEST_CASE("online updates append one residual and shift quantiles predictably") {
  // A zero-parameter model predicts 0, so the appended residual equals the
  // observed next state and the test controls it exactly.
  auto zero_model = models::random_init(3, 4, 2, /*seed=*/1, /*w1_scale=*/1.0);
  zero_model.W2.setZero();  // output = W2 tanh(...) + 0 = 0 everywhere

  SUBCASE("size grows by exactly one") {
    auto rng = make_rng(16, 0);
    ErrorSet set = random_set(5, 2, 1, 0.9, rng);
    online_update(set, random_vec(2, rng), random_vec(1, rng), random_vec(2, rng),
                  zero_model);
    CHECK(set.count() == 6);
  }
  SUBCASE("a zero residual at the query never raises the local quantile") {
    auto rng = make_rng(16, 1);
    for (int rep = 0; rep < 40; ++rep) {
      ErrorSet set = random_set(6, 2, 1, 0.8, rng);
      Vec z = random_vec(2, rng), v = random_vec(1, rng);
      Mat L = random_chol(2, rng);
      const double alpha = 0.25;
      auto before = calibrate(set, L, z, v, alpha);
      online_update(set, z, v, Vec::Zero(2), zero_model);
      auto after = calibrate(set, L, z, v, alpha);
      if (!before.infinite) {
        REQUIRE_FALSE(after.infinite);
        CHECK(after.value <= before.value + 1e-12);
      }
    }
  }
  SUBCASE("a huge residual at the query raises the local quantile") {
    ErrorSet set;
    set.rho = 1.0;
    Vec x = Vec::Zero(2), u = Vec::Zero(1);
    for (double s : {1.0, 2.0, 3.0}) {
      Vec r(2);
      r << s, 0.0;
      set.append({x, u, r});
    }
    const Mat eye = Mat::Identity(2, 2);
    auto before = calibrate(set, eye, x, u, 0.3);  // level 0.7: 3/4 mass at 3
    REQUIRE_FALSE(before.infinite);
    CHECK(before.value == 3.0);
    Vec huge(2);
    huge << 100.0, 0.0;
    online_update(set, x, u, huge, zero_model);
    auto after = calibrate(set, eye, x, u, 0.3);  // 3/5 < 0.7 <= 4/5
    REQUIRE_FALSE(after.infinite);
    CHECK(after.value == 100.0);
  }
}

TEST_CASE("ball variant scores with the identity shape") {
  ErrorSet set;
  set.rho = 1.0;
  Vec x = Vec::Zero(2), u = Vec::Zero(1);
  for (double n : {1.0, 2.0, 3.0}) {
    Vec r(2);
    r << 0.0, n;
    set.append({x, u, r});
  }
  auto q = ball_variant(set, x, u, 0.3);  // level 0.7, cumulative 1/4, 2/4, 3/4
  REQUIRE_FALSE(q.infinite);
  CHECK(q.value == 3.0);

  auto same = calibrate(set, Mat::Identity(2, 2), x, u, 0.3);
  CHECK(same.value == q.value);

  ErrorSet zeros;
  zeros.rho = 1.0;
  for (int i = 0; i < 4; ++i) zeros.append({x, u, Vec::Zero(2)});
  CHECK(ball_variant(zeros, x, u, 0.3).value == 0.0);
}

TEST_CASE("calibration is invariant to a joint residual/shape rescaling") {
  auto rng = make_rng(17, 0);
  for (int rep = 0; rep < 25; ++rep) {
    ErrorSet set = random_set(8, 2, 1, 0.9, rng);
    Mat L = random_chol(2, rng);
    Vec z = random_vec(2, rng), v = random_vec(1, rng);
    const double c = 4.2;
    ErrorSet scaled = set;
    for (auto& p : scaled.points) p.residual *= c;
    auto q = calibrate(set, L, z, v, 0.25);
    auto qs = calibrate(scaled, c * L, z, v, 0.25);
    REQUIRE(q.infinite == qs.infinite);
    if (!q.infinite) CHECK(qs.value == doctest::Approx(q.value).epsilon(1e-10));
  }
}

TEST_CASE("nearest-subset acceleration only enlarges the quantile") {
  auto rng = make_rng(18, 0);
  for (int rep = 0; rep < 30; ++rep) {
    ErrorSet set = random_set(50, 2, 1, 0.85, rng);
    Mat L = random_chol(2, rng);
    Vec z = random_vec(2, rng), v = random_vec(1, rng);
    auto exact = calibrate(set, L, z, v, 0.2);

    ErrorSet fast = set;
    fast.nearest_subset = 10;
    WeightVector wv = weights(fast, z, v);
    CHECK(wv.w.size() == 10);
    double mass = wv.w_test;
    for (double w : wv.w) mass += w;
    CHECK(mass < 1.0);  // the dropped tail is never credited to finite scores

    auto approx = calibrate(fast, L, z, v, 0.2);
    if (exact.infinite) {
      CHECK(approx.infinite);
    } else if (!approx.infinite) {
      CHECK(approx.value >= exact.value - 1e-12);
    }

    ErrorSet big = set;
    big.nearest_subset = 50;  // keep-all threshold: must match exactly
    auto same = calibrate(big, L, z, v, 0.2);
    CHECK(same.infinite == exact.infinite);
    if (!exact.infinite) CHECK(same.value == exact.value);
  }
}

TEST_CASE("disturbance matrix and ellipsoid membership") {
  SUBCASE("v_matrix scales the factor by the radius") {
    CHECK((v_matrix({2.0, false}, Mat::Identity(2, 2)) - 2.0 * Mat::Identity(2, 2))
              .norm() == 0.0);
    CHECK(v_matrix({0.0, false}, Mat::Identity(3, 3)).norm() == 0.0);
    CHECK_THROWS_AS(
        (void)v_matrix({std::numeric_limits<double>::infinity(), true},
                       Mat::Identity(2, 2)),
        std::domain_error);
  }
  SUBCASE("membership margins") {
    Vec c(2);
    c << 1.0, -1.0;
    EllipsoidErrorSet ell{c, Mat::Identity(2, 2), 1.0};
    auto at_center = contains(ell, c);
    CHECK(at_center.inside);
    CHECK(at_center.margin == doctest::Approx(-1.0).epsilon(1e-14));

    Vec boundary = c;
    boundary(0) += 1.0;  // score exactly q
    CHECK(contains(ell, boundary).inside);

    Vec outside = c;
    outside(0) += 2.0;
    auto m = contains(ell, outside);
    CHECK_FALSE(m.inside);
    CHECK(m.margin == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("calibration sets persist bit-for-bit") {
  auto rng = make_rng(19, 0);
  ErrorSet set = random_set(7, 3, 2, 0.9, rng);
  const std::string path = "test_conformal_set.bin";
  save_error_set(set, path);
  ErrorSet back = load_error_set(path, 0.5);
  CHECK(back.rho == 0.5);
  REQUIRE(back.count() == set.count());
  for (int i = 0; i < set.count(); ++i) {
    CHECK(back.points[i].x == set.points[i].x);
    CHECK(back.points[i].u == set.points[i].u);
    CHECK(back.points[i].residual == set.points[i].residual);
  }
  back.rho = set.rho;
  Mat L = random_chol(3, rng);
  Vec z = random_vec(3, rng), v = random_vec(2, rng);
  auto q0 = calibrate(set, L, z, v, 0.15);
  auto q1 = calibrate(back, L, z, v, 0.15);
  CHECK(q0.infinite == q1.infinite);
  if (!q0.infinite) CHECK(q0.value == q1.value);

  SUBCASE("corrupted and truncated files are rejected") {
    {
      std::FILE* f = std::fopen("test_conformal_bad.bin", "wb");
      const char junk[] = "not a calibration file";
      std::fwrite(junk, 1, sizeof junk, f);
      std::fclose(f);
    }
    CHECK_THROWS_AS((void)load_error_set("test_conformal_bad.bin", 0.9),
                    std::runtime_error);
    CHECK_THROWS_AS((void)load_error_set("test_conformal_missing.bin", 0.9),
                    std::runtime_error);
  }
}
