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

// One-step feedback: existence of a tracking control under bounded model
// perturbations, the execution-time solve, and the goal hold check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/QR>

#include "lmtd/core.hpp"
#include "lmtd/domain.hpp"
#include "lmtd/model.hpp"

namespace lmtd {

inline constexpr double kRankTolerance = 1e-10;

struct SingularRange {
  double min = 0.0;
  double max = 0.0;
};

/// Extreme singular values by one-sided Jacobi on the shorter side of M.
inline SingularRange singular_range(const Mat& m) {
  if (m.size() == 0) throw Error("singular_range: empty matrix");
  Mat b = m.rows() <= m.cols() ? Mat(m.transpose()) : m;  // tall, columns to orthogonalize
  const Eigen::Index n = b.cols();
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = b.col(p).squaredNorm();
        const double beta = b.col(q).squaredNorm();
        const double gamma = b.col(p).dot(b.col(q));
        if (gamma == 0.0) continue;
        const double scale = std::sqrt(alpha * beta);
        if (scale == 0.0) continue;
        off = std::max(off, std::abs(gamma) / scale);
        if (std::abs(gamma) <= 1e-15 * scale) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        const Vec bp = b.col(p);
        b.col(p) = c * bp - s * b.col(q);
        b.col(q) = s * bp + c * b.col(q);
      }
    }
    if (off <= 1e-15) break;
  }
  SingularRange out{std::numeric_limits<double>::infinity(), 0.0};
  for (Eigen::Index j = 0; j < n; ++j) {
    const double sv = b.col(j).norm();
    out.min = std::min(out.min, sv);
    out.max = std::max(out.max, sv);
  }
  return out;
}

inline double smallest_singular_value(const Mat& m) { return singular_range(m).min; }

struct OneStepCertificate {
  bool exists = false;
  double u_pert = 0.0;
  double sigma_min = 0.0;
  double nonsingular_margin = 0.0;  // 1 − ‖g1⁺‖·L_{g1}·ε
  bool control_ok = false;
  bool in_domain = true;  // only constrained by the goal check
  ControlVec u_nominal;
};

/// Certificate from the pieces: g1 at the nominal state, the nominal control,
/// ε and the Lipschitz bounds for g0 and g1.
inline OneStepCertificate one_step_certificate(const Mat& g1, const ControlVec& u_k, double epsilon, double l_g0,
                                               double l_g1, const Box& control_box) {
  if (u_k.size() != g1.cols()) throw Error("one_step_exists: control dimension mismatch");
  if (control_box.dim() != u_k.size()) throw Error("one_step_exists: control box dimension mismatch");
  OneStepCertificate cert;
  cert.u_nominal = u_k;
  const SingularRange sv = singular_range(g1);
  const bool rank_deficient = !(sv.min >= kRankTolerance * sv.max) || sv.max == 0.0;
  cert.sigma_min = rank_deficient ? 0.0 : sv.min;
  if (rank_deficient) {
    cert.nonsingular_margin = -std::numeric_limits<double>::infinity();
    cert.u_pert = std::numeric_limits<double>::infinity();
    cert.control_ok = false;
    return cert;
  }
  const double pinv_norm = 1.0 / cert.sigma_min;
  const double d1 = l_g1 * epsilon;
  const double d0 = l_g0 * epsilon;
  cert.nonsingular_margin = 1.0 - pinv_norm * d1;
  if (cert.nonsingular_margin <= 0.0) {
    cert.u_pert = std::numeric_limits<double>::infinity();
    cert.control_ok = false;
    return cert;
  }
  cert.u_pert = pinv_norm * (d1 * u_k.norm() + d0) / cert.nonsingular_margin;
  cert.control_ok = true;
  for (Eigen::Index j = 0; j < u_k.size(); ++j) {
    if (u_k[j] - cert.u_pert < control_box.lo[j] || u_k[j] + cert.u_pert > control_box.hi[j]) {
      cert.control_ok = false;
      break;
    }
  }
  cert.exists = cert.control_ok;
  return cert;
}

/// Whether a feedback control is guaranteed to reach x_next from anywhere in
/// B_ε(x_k), given the perturbation bounds ‖Δ0‖ ≤ L_{g0}ε and ‖Δ1‖ ≤ L_{g1}ε.
inline OneStepCertificate one_step_exists(const ControlAffineModel& m, const TrustedDomain& td, const StateVec& x_k,
                                          const ControlVec& u_k, const StateVec& x_next) {
  if (x_next.size() != x_k.size()) throw Error("one_step_exists: state dimension mismatch");
  return one_step_certificate(m.eval_g1(x_k), u_k, td.epsilon, td.l_g0.l_hat, td.l_g1.l_hat,
                              m.system().control_box);
}

/// Minimum-norm ũ with g1(x̃)·ũ = x_target − g0(x̃).
inline ControlVec solve_one_step(const ControlAffineModel& m, const StateVec& x_tilde, const StateVec& x_target) {
  if (x_target.size() != x_tilde.size()) throw Error("solve_one_step: state dimension mismatch");
  const Mat a = m.eval_g1(x_tilde);
  const Vec b = x_target - m.eval_g0(x_tilde);
  const SingularRange sv = singular_range(a);
  if (sv.max == 0.0 || sv.min < kRankTolerance * sv.max)
    throw Error("solve_one_step: g1 is rank deficient (sigma_min = " + std::to_string(sv.min) + ")");
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(a);
  cod.setThreshold(kRankTolerance);
  ControlVec u = cod.solve(b);
  if ((a * u - b).norm() > 1e-9 * (1.0 + b.norm())) throw Error("solve_one_step: residual check failed");
  return u;
}

/// Hold check at the final state: the control u_st with g(x_K, u_st) = x_K must
/// exist, satisfy the one-step certificate and keep (x_K, u_st) in D_ε.
inline OneStepCertificate goal_invariance_check(const ControlAffineModel& m, const TrustedDomain& td,
                                                const StateVec& x_k,
                                                double u_hold_norm_bound = std::numeric_limits<double>::infinity()) {
  ControlVec u_st;
  try {
    u_st = solve_one_step(m, x_k, x_k);
  } catch (const Error&) {
    OneStepCertificate cert;
    cert.in_domain = false;
    cert.nonsingular_margin = -std::numeric_limits<double>::infinity();
    cert.u_pert = std::numeric_limits<double>::infinity();
    return cert;
  }
  OneStepCertificate cert = one_step_exists(m, td, x_k, u_st, x_k);
  cert.in_domain = in_d_epsilon(concat(x_k, u_st), td);
  cert.exists = cert.exists && cert.in_domain && u_st.norm() <= u_hold_norm_bound;
  return cert;
}

}  // namespace lmtd
