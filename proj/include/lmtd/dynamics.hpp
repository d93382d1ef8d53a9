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

#pragma once

// Discrete-time benchmark systems with known closed-form dynamics. They stand
// in for the unknown plant: data generation and execution ground truth only.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include "lmtd/core.hpp"

namespace lmtd {

struct SystemSpec {
  std::string name;
  int dim_x = 0;
  int dim_u = 0;
  Box state_box;
  Box control_box;
  double dt = 0.0;
  // Leading state coordinates that form the workspace position.
  int position_dims = 0;

  void validate() const {
    if (dim_x <= 0 || dim_u <= 0) throw Error("SystemSpec: nonpositive dimension");
    if (dim_u < dim_x) throw Error("SystemSpec: requires dim(U) >= dim(X)");
    if (state_box.dim() != dim_x || control_box.dim() != dim_u)
      throw Error("SystemSpec: box dimension mismatch");
    if (!(dt > 0.0)) throw Error("SystemSpec: dt must be positive");
    if (position_dims <= 0 || position_dims > dim_x) throw Error("SystemSpec: bad position_dims");
  }
};

using TrueDynamics = std::function<StateVec(const StateVec&, const ControlVec&)>;

namespace sinusoid {

inline constexpr double kDt = 0.2;

inline SystemSpec spec() {
  SystemSpec s;
  s.name = "sinusoid2d";
  s.dim_x = 2;
  s.dim_u = 2;
  s.state_box = Box::cube(2, -5.0, 5.0);
  s.control_box = Box::cube(2, -1.0, 1.0);
  s.dt = kDt;
  s.position_dims = 2;
  return s;
}

inline Vec f0(const StateVec& x) {
  const double a = std::sin(0.3 * (x[0] + 4.5));
  const double b = std::sin(0.3 * (x[1] + 4.5));
  Vec out(2);
  out[0] = x[0] + kDt * 3.0 * a * std::abs(b);
  out[1] = x[1] + kDt * 3.0 * b * std::abs(a);
  return out;
}

inline Mat f1(const StateVec& x) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = kDt * (1.0 + 0.05 * std::cos(x[1]));
  m(1, 1) = kDt * (1.0 + 0.05 * std::sin(x[0]));
  return m;
}

}  // namespace sinusoid

/// f(x,u) = f0(x) + f1(x) u for the 2D sinusoidal system.
inline StateVec step_sinusoid(const StateVec& x, const ControlVec& u) {
  if (x.size() != 2 || u.size() != 2) throw Error("step_sinusoid: dimension mismatch");
  return sinusoid::f0(x) + sinusoid::f1(x) * u;
}

namespace quadrotor {

inline constexpr double kDt = 0.1;
inline constexpr double kAngleLimit = std::numbers::pi / 20.0;

inline SystemSpec spec() {
  SystemSpec s;
  s.name = "quadrotor6d";
  s.dim_x = 6;
  s.dim_u = 6;
  Vec lo(6), hi(6);
  lo << -1, -1, -1, -kAngleLimit, -kAngleLimit, -kAngleLimit;
  hi << 1, 1, 1, kAngleLimit, kAngleLimit, kAngleLimit;
  s.state_box = Box(lo, hi);
  s.control_box = Box::cube(6, -1.0, 1.0);
  s.dt = kDt;
  s.position_dims = 3;
  return s;
}

/// Body-to-world rotation and Euler-rate blocks, scaled by dt. State order is
/// [chi, y, z, phi, theta, psi].
inline Mat f1(const StateVec& x) {
  const double sphi = std::sin(x[3]), cphi = std::cos(x[3]);
  const double sth = std::sin(x[4]), cth = std::cos(x[4]);
  const double spsi = std::sin(x[5]), cpsi = std::cos(x[5]);
  if (std::abs(cth) < 1e-9) throw Error("step_quadrotor: near-singular Euler angles (cos theta ~ 0)");
  const double tth = sth / cth;

  Mat m = Mat::Zero(6, 6);
  m(0, 0) = cth * cpsi;
  m(0, 1) = -cphi * spsi + cpsi * sphi * sth;
  m(0, 2) = spsi * sphi + cphi * cpsi * sth;
  m(1, 0) = cth * spsi;
  m(1, 1) = cphi * cpsi + sphi * spsi * sth;
  m(1, 2) = -cpsi * sphi + cphi * spsi * sth;
  m(2, 0) = -sth;
  m(2, 1) = cth * sphi;
  m(2, 2) = cphi * cth;
  m(3, 3) = 1.0;
  m(3, 4) = sphi * tth;
  m(3, 5) = cphi * tth;
  m(4, 4) = cphi;
  m(4, 5) = -sphi;
  // Last row as published: s_phi * c_theta, c_phi / c_theta.
  m(5, 4) = sphi * cth;
  m(5, 5) = cphi / cth;
  return kDt * m;
}

}  // namespace quadrotor

/// f(x,u) = x + f1(x) u for the fully actuated 6D quadrotor.
inline StateVec step_quadrotor(const StateVec& x, const ControlVec& u) {
  if (x.size() != 6 || u.size() != 6) throw Error("step_quadrotor: dimension mismatch");
  return x + quadrotor::f1(x) * u;
}

inline SystemSpec system_by_name(const std::string& name) {
  if (name == "sinusoid2d") return sinusoid::spec();
  if (name == "quadrotor6d") return quadrotor::spec();
  throw Error("unknown system '" + name + "'");
}

inline TrueDynamics dynamics_by_name(const std::string& name) {
  if (name == "sinusoid2d") return step_sinusoid;
  if (name == "quadrotor6d") return step_quadrotor;
  throw Error("unknown system '" + name + "'");
}

}  // namespace lmtd
