// Copyright 2026 The LMTD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "lmtd/domain.hpp"

using namespace lmtd;

namespace {

const SystemSpec kSys = system_by_name("sinusoid2d");

Dataset dataset_from(const ControlAffineModel& m, int n, std::uint64_t seed, const Vec& offset) {
  Rng rng(seed);
  Dataset d(2, 2);
  d.x.resize(2, n);
  d.u.resize(2, n);
  d.y.resize(2, n);
  for (int i = 0; i < n; ++i) {
    d.x.col(i) = rng.uniform_in(kSys.state_box);
    d.u.col(i) = rng.uniform_in(kSys.control_box);
    d.y.col(i) = m.eval(d.x.col(i), d.u.col(i)) + offset;
  }
  return d;
}

ControlAffineModel random_model(std::uint64_t seed) {
  Rng rng(seed);
  return ControlAffineModel(kSys, Mlp::random({2, 8, 2}, Activation::Tanh, rng),
                            Mlp::random({2, 8, 4}, Activation::Tanh, rng));
}

LipschitzResult stub(double l) {
  LipschitzResult r;
  LipschitzEstimate e;
  e.l_hat = l;
  r.estimate = e;
  return r;
}

DomainEstimators constant_estimators(double l) {
  DomainEstimators est;
  est.model_error = [l](double, int) { return stub(l); };
  est.g0 = [](double) { return stub(1.0); };
  est.g1 = [](double) { return stub(0.1); };
  return est;
}

TrustedDomain manual_domain(const Mat& pairs, double r, double eps) {
  TrustedDomain td;
  td.system = kSys;
  td.s_d = Dataset(2, 2);
  td.s_d.x = pairs.topRows(2);
  td.s_d.u = pairs.bottomRows(2);
  td.s_d.y = td.s_d.x;
  td.r = r;
  td.epsilon = eps;
  td.build_indexes();
  return td;
}

}  // namespace

TEST(ErrorStats, PerfectModelIsZero) {
  const ControlAffineModel m = random_model(1);
  const ErrorStats st = error_stats(dataset_from(m, 50, 2, Vec::Zero(2)), m);
  EXPECT_EQ(st.mu, 0.0);
  EXPECT_EQ(st.sigma, 0.0);
  for (double e : st.errors) EXPECT_EQ(e, 0.0);
}

TEST(ErrorStats, ConstantUnitErrors) {
  const ControlAffineModel m = random_model(3);
  const ErrorStats st = error_stats(dataset_from(m, 3, 4, (Vec(2) << 1.0, 0.0).finished()), m);
  EXPECT_NEAR(st.mu, 1.0, 1e-12);
  EXPECT_NEAR(st.sigma, 0.0, 1e-12);
}

TEST(ErrorStats, MatchesDirectRecomputation) {
  const ControlAffineModel m = random_model(5);
  Dataset d = dataset_from(m, 100, 6, Vec::Zero(2));
  Rng rng(7);
  for (Eigen::Index c = 0; c < d.y.cols(); ++c) d.y.col(c) += 0.1 * Vec::NullaryExpr(2, [&] { return rng.normal(); });
  const ErrorStats st = error_stats(d, m);
  long double sum = 0.0L, sq = 0.0L;
  std::vector<long double> e(100);
  for (int i = 0; i < 100; ++i) {
    const Vec g = m.eval(d.x.col(i), d.u.col(i));
    long double s2 = 0.0L;
    for (int k = 0; k < 2; ++k) s2 += static_cast<long double>(d.y(k, i) - g[k]) * (d.y(k, i) - g[k]);
    e[static_cast<std::size_t>(i)] = std::sqrt(s2);
    sum += e[static_cast<std::size_t>(i)];
  }
  const long double mu = sum / 100.0L;
  for (auto v : e) sq += (v - mu) * (v - mu);
  EXPECT_NEAR(st.mu, static_cast<double>(mu), 1e-12);
  EXPECT_NEAR(st.sigma, static_cast<double>(std::sqrt(sq / 100.0L)), 1e-12);
}

TEST(ErrorStats, EmptyThrows) { EXPECT_THROW(error_stats(Dataset(2, 2), random_model(1)), Error); }

TEST(Filter, ZeroSigmaKeepsEverything) {
  EXPECT_EQ(filter_indices({0.5, 0.5, 0.5}, 0.5, 0.0, 3.0).size(), 3u);
}

TEST(Filter, DropsOutlier) {
  const std::vector<double> e{0.1, 0.2, 10.0};
  const double mu = (0.1 + 0.2 + 10.0) / 3.0;
  double ss = 0.0;
  for (double v : e) ss += (v - mu) * (v - mu);
  const double sigma = std::sqrt(ss / 3.0);
  EXPECT_NEAR(mu, 3.43, 5e-3);
  EXPECT_NEAR(sigma, 4.64, 5e-3);
  EXPECT_NEAR(mu + sigma, 8.08, 5e-3);
  EXPECT_EQ(filter_indices(e, mu, sigma, 1.0), (std::vector<std::size_t>{0, 1}));
}

TEST(Filter, NegativeAThrows) { EXPECT_THROW(filter_indices({1.0}, 1.0, 0.0, -1.0), Error); }

TEST(Epsilon, Formula) {
  EXPECT_NEAR(compute_epsilon(0.1919, 0.3633, 0.1161), 0.1859, 5e-4);
  EXPECT_NEAR(compute_epsilon(0.1919, 0.3633, 0.1161), 0.1919 * 0.3633 + 0.1161, 1e-15);
  EXPECT_EQ(compute_epsilon(0.0, 7.0, 0.3), 0.3);
  EXPECT_EQ(compute_epsilon(1.0, 1.0, 0.0), 1.0);
  EXPECT_THROW(compute_epsilon(-1.0, 1.0, 0.0), Error);
}

TEST(SelectDomain, TinyLipschitzAcceptsFirstRadius) {
  DomainConfig cfg;
  const DomainResult res = select_r_and_domain(manual_domain(Mat::Zero(4, 3), 1, 0).s_d, 0.0, 0.02, 0.01, cfg,
                                               constant_estimators(1e-3), kSys);
  ASSERT_TRUE(res.ok()) << res.failure;
  EXPECT_EQ(res.log.size(), 1u);
  EXPECT_NEAR(res.domain->r, 0.05, 1e-15);
  EXPECT_NEAR(res.domain->epsilon, 5e-5, 1e-15);
  EXPECT_LT(res.domain->epsilon, res.domain->r);
}

TEST(SelectDomain, LargeLipschitzFails) {
  DomainConfig cfg;
  const DomainResult res =
      select_r_and_domain(manual_domain(Mat::Zero(4, 3), 1, 0).s_d, 0.1, 0.02, 0.01, cfg, constant_estimators(1.2));
  EXPECT_FALSE(res.ok());
  EXPECT_NE(res.failure.find(">= 1"), std::string::npos);
}

TEST(SelectDomain, HandIteratedLoop) {
  DomainConfig cfg;
  cfg.a = 0.0;  // r0 = mu
  const double alpha = 1e-3 * 0.05;
  const DomainResult res =
      select_r_and_domain(manual_domain(Mat::Zero(4, 3), 1, 0).s_d, 0.1, 0.05, 0.0, cfg, constant_estimators(0.5));
  ASSERT_TRUE(res.ok()) << res.failure;
  ASSERT_GE(res.log.size(), 2u);
  EXPECT_NEAR(res.log[0].epsilon, 0.125, 1e-15);
  EXPECT_NEAR(res.log[1].r, 0.125 + alpha, 1e-15);
  // Accepted radius lies above the fixed point e_T / (1 − L) = 0.2.
  EXPECT_GT(res.domain->r, res.domain->epsilon);
  EXPECT_GT(res.domain->r, 0.2);
  // Each retry follows r ← ε + α.
  for (std::size_t k = 1; k < res.log.size(); ++k) EXPECT_NEAR(res.log[k].r, res.log[k - 1].epsilon + alpha, 1e-15);
}

TEST(SelectDomain, EstimatorFailurePropagates) {
  DomainEstimators est = constant_estimators(0.1);
  est.model_error = [](double, int) {
    LipschitzResult r;
    r.failure = "KS test rejected";
    return r;
  };
  const DomainResult res =
      select_r_and_domain(manual_domain(Mat::Zero(4, 3), 1, 0).s_d, 0.1, 0.05, 0.01, DomainConfig{}, est);
  EXPECT_FALSE(res.ok());
  EXPECT_NE(res.failure.find("KS"), std::string::npos);
}

TEST(DEpsilon, TrainingPointAndClosedBoundary) {
  const Mat pairs = Mat::Zero(4, 1);
  const TrustedDomain td = manual_domain(pairs, 0.75, 0.25);
  EXPECT_TRUE(in_d_epsilon(Vec::Zero(4), td));
  Vec q = Vec::Zero(4);
  q[2] = 0.5;
  EXPECT_TRUE(in_d_epsilon(q, td));
  q[2] = std::nextafter(0.5, 1.0);
  EXPECT_FALSE(in_d_epsilon(q, td));
}

TEST(DEpsilon, EpsilonBallStaysWithinRadiusOfNeighbor) {
  Rng rng(8);
  Mat pairs(4, 300);
  for (int j = 0; j < 300; ++j) pairs.col(j) = rng.uniform_in(Box::cube(4, -1, 1));
  const TrustedDomain td = manual_domain(pairs, 0.3, 0.1);
  int checked = 0;
  while (checked < 1000) {
    const Vec q = rng.uniform_in(Box::cube(4, -1.2, 1.2));
    if (!in_d_epsilon(q, td)) continue;
    ++checked;
    const Vec nn = td.pair_index->point(td.pair_index->nearest(q).index);
    for (int k = 0; k < 1000; ++k) {
      Vec dir = Vec::NullaryExpr(4, [&] { return rng.normal(); });
      const Vec probe = q + td.epsilon * dir.normalized();
      ASSERT_LE((probe - nn).norm(), td.r + 1e-12);
    }
  }
}

TEST(Dispersion, SinglePointApproachesRadius) {
  const NnIndex idx(Mat::Zero(2, 1));
  Rng rng(9);
  const auto centers = std::make_shared<const NnIndex>(Mat::Zero(2, 1));
  const BallUnionSampler ball(centers, 0.5);
  const double b = dispersion_brute(idx, [&](Rng& r) { return ball(r); }, 20000, rng);
  EXPECT_LE(b, 0.5);
  EXPECT_GT(b, 0.49);
}

TEST(Dispersion, GridCovering) {
  const double d = 0.1;
  Mat grid(2, 121);
  int k = 0;
  for (int i = 0; i <= 10; ++i)
    for (int j = 0; j <= 10; ++j) grid.col(k++) = (Vec(2) << i * d, j * d).finished();
  const NnIndex idx(grid);
  Rng rng(10);
  const double b = dispersion_brute(idx, box_sampler(Box::cube(2, 0, 1)), 20000, rng);
  EXPECT_LE(b, d * std::sqrt(2.0) / 2.0 + 1e-12);
  EXPECT_GT(b, 0.9 * d * std::sqrt(2.0) / 2.0);
}

TEST(BallUnion, OverlapCorrectionIsUniformOverUnion) {
  // Intervals [−1, 1] and [0, 2]; overlap [0, 1] holds 1/3 of the union.
  Mat c(1, 2);
  c << 0.0, 1.0;
  const auto centers = std::make_shared<const NnIndex>(c);
  const BallUnionSampler uniform(centers, 1.0, true), mixture(centers, 1.0, false);
  Rng rng(11);
  int in_u = 0, in_m = 0;
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    const double a = uniform(rng)[0], b = mixture(rng)[0];
    ASSERT_GE(a, -1.0);
    ASSERT_LE(a, 2.0);
    in_u += a >= 0.0 && a <= 1.0;
    in_m += b >= 0.0 && b <= 1.0;
  }
  EXPECT_NEAR(static_cast<double>(in_u) / n, 1.0 / 3.0, 0.01);
  EXPECT_NEAR(static_cast<double>(in_m) / n, 0.5, 0.01);
}

TEST(Estimators, PerfectModelGivesZeroModelErrorSlope) {
  const ControlAffineModel m = random_model(12);
  const Dataset s = dataset_from(m, 200, 13, Vec::Zero(2));
  SlopeSampleConfig slope;
  slope.n_s = 30;
  slope.n_l = 200;
  slope.seed = 5;
  const TrueDynamics truth = [&](const StateVec& x, const ControlVec& u) { return m.eval(x, u); };
  const DomainEstimators est = make_domain_estimators(m, s, truth, Dataset(), LipschitzSource::Oracle, slope, 0.975);
  const LipschitzResult r = est.model_error(0.3, 0);
  ASSERT_TRUE(r.ok()) << r.failure;
  EXPECT_EQ(r.estimate->l_hat, 0.0);
}

TEST(Summary, RoundTripPreservesDomain) {
  Rng rng(14);
  Mat pairs(4, 40);
  for (int j = 0; j < 40; ++j) pairs.col(j) = rng.uniform_in(Box::cube(4, -1, 1));
  TrustedDomain td = manual_domain(pairs, 0.4, 0.15);
  td.e_t = 0.05;
  td.l_fg.l_hat = 0.25;
  td.l_g0.l_hat = 1.1;
  td.l_g1.l_hat = 0.07;
  td.rho_cubed = 0.975 * 0.975 * 0.975;
  const TrustedDomain back = domain_from_summary(domain_summary(td), td.s_d);
  EXPECT_EQ(back.r, td.r);
  EXPECT_EQ(back.epsilon, td.epsilon);
  EXPECT_EQ(back.l_g0.l_hat, td.l_g0.l_hat);
  EXPECT_EQ(back.l_g1.l_hat, td.l_g1.l_hat);
  EXPECT_EQ(back.l_fg.l_hat, td.l_fg.l_hat);
  EXPECT_TRUE(in_d_epsilon(pairs.col(3), back));
}
