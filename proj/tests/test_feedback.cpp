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

#include <Eigen/Eigenvalues>
#include <cmath>

#include "lmtd/feedback.hpp"

using namespace lmtd;

namespace {

Mat random_matrix(Rng& rng, int r, int c) { return Mat::NullaryExpr(r, c, [&] { return rng.uniform(-1.0, 1.0); }); }

double sigma_min_oracle(const Mat& m) {
  const Mat g = m.rows() <= m.cols() ? Mat(m * m.transpose()) : Mat(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Mat> es(g);
  return std::sqrt(std::max(0.0, es.eigenvalues().minCoeff()));
}

Vec gauss_solve(Mat a, Vec b) {
  const int n = static_cast<int>(a.rows());
  for (int k = 0; k < n; ++k) {
    int p = k;
    for (int i = k + 1; i < n; ++i)
      if (std::fabs(a(i, k)) > std::fabs(a(p, k))) p = i;
    a.row(k).swap(a.row(p));
    std::swap(b[k], b[p]);
    for (int i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (int j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  Vec x(n);
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
    x[i] = s / a(i, i);
  }
  return x;
}

// g0 = identity, g1 ≡ A (constant network).
ControlAffineModel constant_g1_model(const SystemSpec& s, const Mat& a) {
  Vec flat(a.size());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) flat[i * a.cols() + j] = a(i, j);
  DenseLayer hidden{Mat::Zero(2, s.dim_x), Vec::Zero(2)};
  DenseLayer last{Mat::Zero(flat.size(), 2), flat};
  return ControlAffineModel(s, std::nullopt, Mlp::from_layers({hidden, last}, Activation::Relu));
}

SystemSpec square_system(int n) {
  SystemSpec s;
  s.name = "test";
  s.dim_x = n;
  s.dim_u = n;
  s.state_box = Box::cube(n, -1, 1);
  s.control_box = Box::cube(n, -1, 1);
  s.dt = 0.1;
  s.position_dims = std::min(n, 3);
  return s;
}

TrustedDomain domain_at(const Vec& pair, int nx, double r, double eps, double l_g0, double l_g1) {
  TrustedDomain td;
  td.s_d = Dataset(nx, static_cast<int>(pair.size()) - nx);
  td.s_d.x = pair.head(nx);
  td.s_d.u = pair.tail(pair.size() - nx);
  td.s_d.y = td.s_d.x;
  td.r = r;
  td.epsilon = eps;
  td.l_g0.l_hat = l_g0;
  td.l_g1.l_hat = l_g1;
  td.build_indexes();
  return td;
}

}  // namespace

TEST(SingularValues, KnownMatrices) {
  EXPECT_NEAR(smallest_singular_value(Mat::Identity(3, 3)), 1.0, 1e-15);
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 0.5;
  EXPECT_NEAR(smallest_singular_value(d), 0.5, 1e-15);
  const SingularRange r = singular_range(d);
  EXPECT_NEAR(r.max, 2.0, 1e-15);
}

TEST(SingularValues, RectangularMatchesEigenOracle) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Mat m = random_matrix(rng, 4, 6);
    EXPECT_NEAR(smallest_singular_value(m), sigma_min_oracle(m), 1e-9);
    EXPECT_NEAR(smallest_singular_value(m.transpose()), sigma_min_oracle(m), 1e-9);
  }
}

TEST(SingularValues, RankDeficientIsNearZero) {
  Mat m = Mat::Zero(3, 3);
  m(0, 0) = 1.0;
  m(1, 1) = 1.0;
  EXPECT_NEAR(smallest_singular_value(m), 0.0, 1e-15);
}

TEST(Certificate, ZeroEpsilonHasNoPerturbation) {
  const OneStepCertificate c =
      one_step_certificate(0.2 * Mat::Identity(2, 2), Vec::Constant(2, 0.9), 0.0, 1.3, 0.1, Box::cube(2, -1, 1));
  EXPECT_TRUE(c.exists);
  EXPECT_EQ(c.u_pert, 0.0);
  EXPECT_EQ(c.nonsingular_margin, 1.0);
}

TEST(Certificate, HoverMarginVanishes) {
  const Mat g1 = 0.1 * Mat::Identity(6, 6);
  const OneStepCertificate c = one_step_certificate(g1, Vec::Zero(6), 1.0, 1.0, 0.1, Box::cube(6, -1, 1));
  EXPECT_LE(c.nonsingular_margin, 0.0);
  EXPECT_FALSE(c.exists);
  const OneStepCertificate d = one_step_certificate(g1, Vec::Zero(6), 0.5, 0.0, 0.3, Box::cube(6, -1, 1));
  EXPECT_FALSE(d.exists);
}

TEST(Certificate, FormulaAgainstHandComputation) {
  const Mat g1 = 0.2 * Mat::Identity(2, 2);
  const Vec u = (Vec(2) << 0.3, -0.4).finished();  // ‖u‖ = 0.5
  const double eps = 0.01, l0 = 1.2, l1 = 0.5;
  const double margin = 1.0 - (1.0 / 0.2) * l1 * eps;
  const double want = (1.0 / 0.2) * (l1 * eps * 0.5 + l0 * eps) / margin;
  const OneStepCertificate c = one_step_certificate(g1, u, eps, l0, l1, Box::cube(2, -1, 1));
  EXPECT_NEAR(c.sigma_min, 0.2, 1e-15);
  EXPECT_NEAR(c.nonsingular_margin, margin, 1e-15);
  EXPECT_NEAR(c.u_pert, want, 1e-15);
  EXPECT_TRUE(c.exists);
}

TEST(Certificate, BoundaryControlFailsBoxContainment) {
  const OneStepCertificate c =
      one_step_certificate(0.2 * Mat::Identity(2, 2), Vec::Constant(2, 1.0), 0.01, 1.0, 0.1, Box::cube(2, -1, 1));
  EXPECT_GT(c.u_pert, 0.0);
  EXPECT_GT(c.nonsingular_margin, 0.0);
  EXPECT_FALSE(c.control_ok);
  EXPECT_FALSE(c.exists);
}

TEST(Certificate, RankDeficientG1) {
  Mat g1 = Mat::Zero(2, 2);
  g1(0, 0) = 1.0;
  const OneStepCertificate c = one_step_certificate(g1, Vec::Zero(2), 0.01, 1.0, 0.1, Box::cube(2, -1, 1));
  EXPECT_FALSE(c.exists);
  EXPECT_EQ(c.sigma_min, 0.0);
}

TEST(Solve, UnperturbedRecoversNominal) {
  Rng rng(2);
  const SystemSpec s = system_by_name("sinusoid2d");
  const ControlAffineModel m(s, Mlp::random({2, 8, 2}, Activation::Tanh, rng),
                             Mlp::random({2, 8, 4}, Activation::Tanh, rng));
  for (int i = 0; i < 50; ++i) {
    const Vec x = rng.uniform_in(s.state_box), u = rng.uniform_in(s.control_box);
    if (smallest_singular_value(m.eval_g1(x)) < 1e-3) continue;
    EXPECT_NEAR((solve_one_step(m, x, m.eval(x, u)) - u).norm(), 0.0, 1e-9);
  }
}

TEST(Solve, IdentityReturnsRightHandSide) {
  const SystemSpec s = square_system(3);
  const ControlAffineModel m = constant_g1_model(s, Mat::Identity(3, 3));
  const Vec x = (Vec(3) << 0.1, 0.2, 0.3).finished(), target = (Vec(3) << 1.0, -2.0, 0.5).finished();
  EXPECT_NEAR((solve_one_step(m, x, target) - (target - x)).norm(), 0.0, 1e-15);
}

TEST(Solve, MatchesGaussianElimination) {
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    const int n = 2 + i % 5;
    const Mat a = random_matrix(rng, n, n);
    if (sigma_min_oracle(a) < 1e-2) continue;
    const ControlAffineModel m = constant_g1_model(square_system(n), a);
    const Vec x = random_matrix(rng, n, 1), target = random_matrix(rng, n, 1);
    const Vec want = gauss_solve(a, target - x);
    EXPECT_NEAR((solve_one_step(m, x, target) - want).norm(), 0.0, 1e-10 * (1.0 + want.norm()));
  }
}

TEST(Solve, RankDeficientThrows) {
  Mat a = Mat::Zero(2, 2);
  a(0, 0) = 1.0;
  const ControlAffineModel m = constant_g1_model(square_system(2), a);
  EXPECT_THROW(solve_one_step(m, Vec::Zero(2), Vec::Ones(2)), Error);
}

TEST(GoalCheck, FixedPointWithZeroEpsilon) {
  const ControlAffineModel m = constant_g1_model(square_system(2), 0.5 * Mat::Identity(2, 2));
  const Vec x = (Vec(2) << 0.3, -0.2).finished();
  const TrustedDomain td = domain_at(concat(x, Vec::Zero(2)), 2, 0.1, 0.0, 1.0, 0.0);
  const OneStepCertificate c = goal_invariance_check(m, td, x);
  EXPECT_TRUE(c.exists);
  EXPECT_NEAR(c.u_nominal.norm(), 0.0, 1e-15);
  EXPECT_TRUE(c.in_domain);
}

TEST(GoalCheck, ConsistentWithOneStepExists) {
  Rng rng(4);
  const Mat a = Mat::Identity(2, 2) * 0.3 + 0.05 * random_matrix(rng, 2, 2);
  const ControlAffineModel m = constant_g1_model(square_system(2), a);
  const Vec x = (Vec(2) << 0.1, 0.1).finished();
  const TrustedDomain td = domain_at(concat(x, Vec::Zero(2)), 2, 0.5, 0.01, 1.0, 0.2);
  const OneStepCertificate g = goal_invariance_check(m, td, x);
  const OneStepCertificate o = one_step_exists(m, td, x, g.u_nominal, x);
  EXPECT_EQ(g.u_pert, o.u_pert);
  EXPECT_EQ(g.nonsingular_margin, o.nonsingular_margin);
  EXPECT_EQ(g.exists, o.exists && g.in_domain);
}

TEST(GoalCheck, OutsideDomainFails) {
  const ControlAffineModel m = constant_g1_model(square_system(2), 0.5 * Mat::Identity(2, 2));
  const TrustedDomain td = domain_at(concat(Vec::Constant(2, 0.9), Vec::Zero(2)), 2, 0.1, 0.0, 1.0, 0.0);
  EXPECT_FALSE(goal_invariance_check(m, td, Vec::Zero(2)).exists);
}
