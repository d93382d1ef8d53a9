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

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "lmtd/dynamics.hpp"

using namespace lmtd;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

// Scalar re-derivation of the 2D closed form.
Vec sinusoid_oracle(double x, double y, double u0, double u1) {
  const double dt = 0.2;
  const double sx = std::sin(0.3 * (x + 4.5)), sy = std::sin(0.3 * (y + 4.5));
  return v2(x + dt * 3.0 * sx * std::fabs(sy) + dt * (1.0 + 0.05 * std::cos(y)) * u0,
            y + dt * 3.0 * sy * std::fabs(sx) + dt * (1.0 + 0.05 * std::sin(x)) * u1);
}

}  // namespace

TEST(Sinusoid, FixedPointAtMinusFourPointFive) {
  EXPECT_EQ(step_sinusoid(v2(-4.5, -4.5), v2(0, 0)), v2(-4.5, -4.5));
}

TEST(Sinusoid, UnitControlAtFixedPoint) {
  const Vec got = step_sinusoid(v2(-4.5, -4.5), v2(1, 0));
  EXPECT_NEAR(got[0], -4.5 + 0.2 * (1.0 + 0.05 * std::cos(-4.5)), 1e-15);
  EXPECT_NEAR(got[1], -4.5, 1e-15);
}

TEST(Sinusoid, DriftAtOrigin) {
  const Vec got = step_sinusoid(v2(0, 0), v2(0, 0));
  const double d = 0.2 * 3.0 * std::sin(1.35) * std::fabs(std::sin(1.35));
  EXPECT_NEAR(got[0], d, 1e-15);
  EXPECT_NEAR(got[1], d, 1e-15);
}

TEST(Sinusoid, MatchesScalarOracleOnRandomInputs) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Vec x = rng.uniform_in(Box::cube(2, -5, 5)), u = rng.uniform_in(Box::cube(2, -1, 1));
    const Vec got = step_sinusoid(x, u), want = sinusoid_oracle(x[0], x[1], u[0], u[1]);
    EXPECT_NEAR((got - want).norm(), 0.0, 1e-14);
  }
}

TEST(Sinusoid, Deterministic) {
  const Vec x = v2(0.3, -1.7), u = v2(0.2, 0.9);
  const Vec a = step_sinusoid(x, u), b = step_sinusoid(x, u);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * 2), 0);
}

TEST(Sinusoid, DimensionMismatchThrows) { EXPECT_THROW(step_sinusoid(Vec::Zero(3), v2(0, 0)), Error); }

TEST(Quadrotor, ZeroStateZeroControl) {
  EXPECT_EQ(step_quadrotor(Vec::Zero(6), Vec::Zero(6)), Vec::Zero(6));
}

TEST(Quadrotor, HoverActuationIsScaledIdentity) {
  Vec u = Vec::Zero(6);
  u[0] = 1.0;
  Vec want = Vec::Zero(6);
  want[0] = 0.1;
  EXPECT_NEAR((step_quadrotor(Vec::Zero(6), u) - want).norm(), 0.0, 1e-15);
  EXPECT_NEAR((quadrotor::f1(Vec::Zero(6)) - 0.1 * Mat::Identity(6, 6)).norm(), 0.0, 1e-15);
}

// Position block checked against the Z-Y-X rotation composed from axis-angle
// factors; Euler-rate block against the hand-expanded rows.
TEST(Quadrotor, MatchesRotationOracle) {
  Rng rng(12);
  const SystemSpec s = quadrotor::spec();
  for (int i = 0; i < 200; ++i) {
    const Vec x = rng.uniform_in(s.state_box);
    const double phi = x[3], th = x[4], psi = x[5];
    const Eigen::Matrix3d r = (Eigen::AngleAxisd(psi, Eigen::Vector3d::UnitZ()) *
                               Eigen::AngleAxisd(th, Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(phi, Eigen::Vector3d::UnitX()))
                                  .toRotationMatrix();
    const Mat m = quadrotor::f1(x) / 0.1;
    EXPECT_NEAR((m.topLeftCorner(3, 3) - r).norm(), 0.0, 1e-12);
    EXPECT_NEAR(m.topRightCorner(3, 3).norm(), 0.0, 0.0);
    EXPECT_NEAR(m.bottomLeftCorner(3, 3).norm(), 0.0, 0.0);
    Mat e(3, 3);
    e << 1, std::sin(phi) * std::tan(th), std::cos(phi) * std::tan(th),  //
        0, std::cos(phi), -std::sin(phi),                                  //
        0, std::sin(phi) * std::cos(th), std::cos(phi) / std::cos(th);
    EXPECT_NEAR((m.bottomRightCorner(3, 3) - e).norm(), 0.0, 1e-12);
  }
}

TEST(Quadrotor, RolledStateSecondControl) {
  Vec x = Vec::Zero(6);
  x[3] = std::numbers::pi / 20.0;
  Vec u = Vec::Zero(6);
  u[1] = 1.0;
  const double c = std::cos(std::numbers::pi / 20.0), s = std::sin(std::numbers::pi / 20.0);
  Vec want(6);
  want << 0.0, 0.1 * c, 0.1 * s, 0.0, 0.0, 0.0;
  EXPECT_NEAR((step_quadrotor(x, u) - (x + want)).norm(), 0.0, 1e-15);
}

TEST(Registry, ByName) {
  EXPECT_EQ(system_by_name("sinusoid2d").dim_x, 2);
  EXPECT_EQ(system_by_name("quadrotor6d").dim_u, 6);
  EXPECT_THROW(system_by_name("kuka"), Error);
  const auto f = dynamics_by_name("sinusoid2d");
  EXPECT_EQ(f(v2(-4.5, -4.5), v2(0, 0)), v2(-4.5, -4.5));
}
