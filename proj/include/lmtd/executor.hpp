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

// Closed-loop execution with the one-step feedback law, open-loop rollout,
// the goal hold loop and tracking statistics.

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lmtd/core.hpp"
#include "lmtd/dynamics.hpp"
#include "lmtd/feedback.hpp"
#include "lmtd/model.hpp"
#include "lmtd/planner.hpp"

namespace lmtd {

enum class ExecMode { Closed, Open };

inline std::string to_string(ExecMode m) { return m == ExecMode::Closed ? "closed" : "open"; }

struct ExecutionTrace {
  Trajectory nominal;
  std::vector<StateVec> executed_states;
  std::vector<ControlVec> applied_controls;
  std::vector<double> per_step_err;
  ExecMode mode = ExecMode::Closed;
  bool failed = false;  // feedback solve failed; the trace stops there
  std::string failure;
  bool collided = false;

  double max_track_err() const {
    double m = 0.0;
    for (double e : per_step_err) m = std::max(m, e);
    return m;
  }
};

struct SafetyCheck {
  std::vector<Box> obstacles;
  int position_dims = 0;
  double inflation = 0.0;  // bounding radius of the body
};

namespace detail {

inline void record(ExecutionTrace& tr, const StateVec& x, std::size_t k, const SafetyCheck* safety) {
  tr.executed_states.push_back(x);
  tr.per_step_err.push_back((x - tr.nominal.states[k]).norm());
  if (safety && !safety->obstacles.empty() && in_collision(x, safety->inflation, safety->obstacles, safety->position_dims))
    tr.collided = true;
}

inline void check_plan(const Trajectory& plan) {
  if (plan.states.empty() || plan.states.size() != plan.controls.size() + 1)
    throw Error("execute: malformed trajectory");
}

}  // namespace detail

/// x̃₀ = x₀ and x̃₁ = f(x₀, u₀); for k ≥ 1 the control solves
/// g(x̃_k, ũ_k) = x_{k+1} and x̃_{k+1} = f(x̃_k, ũ_k).
inline ExecutionTrace execute_closed_loop(const TrueDynamics& f, const ControlAffineModel& m, const Trajectory& plan,
                                          const SafetyCheck* safety = nullptr) {
  detail::check_plan(plan);
  ExecutionTrace tr;
  tr.nominal = plan;
  tr.mode = ExecMode::Closed;
  StateVec x = plan.states.front();
  detail::record(tr, x, 0, safety);
  for (std::size_t k = 0; k < plan.controls.size(); ++k) {
    ControlVec u;
    if (k == 0) {
      u = plan.controls[0];
    } else {
      try {
        u = solve_one_step(m, x, plan.states[k + 1]);
      } catch (const Error& e) {
        tr.failed = true;
        tr.failure = "step " + std::to_string(k) + ": " + e.what();
        return tr;
      }
    }
    tr.applied_controls.push_back(u);
    x = f(x, u);
    detail::record(tr, x, k + 1, safety);
  }
  return tr;
}

/// Applies the nominal controls from x₀ with no feedback.
inline ExecutionTrace execute_open_loop(const TrueDynamics& f, const Trajectory& plan,
                                        const SafetyCheck* safety = nullptr) {
  detail::check_plan(plan);
  ExecutionTrace tr;
  tr.nominal = plan;
  tr.mode = ExecMode::Open;
  StateVec x = plan.states.front();
  detail::record(tr, x, 0, safety);
  for (std::size_t k = 0; k < plan.controls.size(); ++k) {
    tr.applied_controls.push_back(plan.controls[k]);
    x = f(x, plan.controls[k]);
    detail::record(tr, x, k + 1, safety);
  }
  return tr;
}

struct HoldTrace {
  std::vector<StateVec> states;
  std::vector<ControlVec> controls;
  double max_goal_dist = 0.0;
  bool failed = false;
  std::string failure;
};

/// Repeats the feedback law with target x_K for n_hold steps from x_start and
/// tracks the distance to x_goal.
inline HoldTrace hold_at_goal(const TrueDynamics& f, const ControlAffineModel& m, const StateVec& x_k,
                              const StateVec& x_start, const StateVec& x_goal, int n_hold) {
  if (n_hold < 0) throw Error("hold_at_goal: n_hold must be nonnegative");
  HoldTrace h;
  StateVec x = x_start;
  h.states.push_back(x);
  h.max_goal_dist = (x - x_goal).norm();
  for (int i = 0; i < n_hold; ++i) {
    ControlVec u;
    try {
      u = solve_one_step(m, x, x_k);
    } catch (const Error& e) {
      h.failed = true;
      h.failure = "hold step " + std::to_string(i) + ": " + e.what();
      return h;
    }
    x = f(x, u);
    h.controls.push_back(u);
    h.states.push_back(x);
    h.max_goal_dist = std::max(h.max_goal_dist, (x - x_goal).norm());
  }
  return h;
}

inline HoldTrace hold_at_goal(const TrueDynamics& f, const ControlAffineModel& m, const ExecutionTrace& tr,
                              const StateVec& x_goal, int n_hold) {
  if (tr.failed || tr.executed_states.empty()) throw Error("hold_at_goal: execution did not finish");
  return hold_at_goal(f, m, tr.nominal.states.back(), tr.executed_states.back(), x_goal, n_hold);
}

// ---------------------------------------------------------------------------
// Statistics

struct RunStats {
  double max_track_err = 0.0;
  double goal_err = 0.0;
};

inline RunStats run_stats(const ExecutionTrace& tr, const StateVec& x_goal) {
  if (tr.executed_states.empty()) throw Error("run_stats: empty trace");
  return {tr.max_track_err(), (tr.executed_states.back() - x_goal).norm()};
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  double worst = 0.0;
  std::size_t n = 0;
};

inline Summary summarize(const std::vector<double>& v) {
  if (v.empty()) throw Error("aggregate_stats: no runs");
  Summary s;
  s.n = v.size();
  double sum = 0.0;
  for (double x : v) {
    if (x < 0.0 || !std::isfinite(x)) throw Error("aggregate_stats: invalid error value");
    sum += x;
    s.worst = std::max(s.worst, x);
  }
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct StatsRow {
  std::string method;  // e.g. "LMTD-RRT"
  ExecMode mode = ExecMode::Closed;
  Summary max_track_err;
  Summary goal_err;
};

inline StatsRow aggregate_stats(const std::string& method, ExecMode mode, const std::vector<RunStats>& runs) {
  std::vector<double> te, ge;
  for (const auto& r : runs) {
    te.push_back(r.max_track_err);
    ge.push_back(r.goal_err);
  }
  return {method, mode, summarize(te), summarize(ge)};
}

inline std::string format_summary(const Summary& s) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f (%.3f)", s.mean, s.std, s.worst);
  return buf;
}

/// Aligned text table: method, loop, tracking error and goal distance as
/// mean ± std (worst).
inline std::string stats_table_text(const std::vector<StatsRow>& rows) {
  std::vector<std::array<std::string, 4>> cells{{"Method", "Loop", "Max tracking error", "Distance to goal"}};
  for (const auto& r : rows)
    cells.push_back({r.method, r.mode == ExecMode::Closed ? "CL" : "OL", format_summary(r.max_track_err),
                     format_summary(r.goal_err)});
  std::array<std::size_t, 4> width{};
  auto display_len = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
  };
  for (const auto& row : cells)
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], display_len(row[c]));
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 4; ++c) {
      out << row[c];
      if (c + 1 < 4) out << std::string(width[c] - display_len(row[c]) + 2, ' ');
    }
    out << '\n';
  }
  return out.str();
}

inline std::string stats_table_csv(const std::vector<StatsRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "method,loop,n,track_mean,track_std,track_worst,goal_mean,goal_std,goal_worst\n";
  for (const auto& r : rows)
    out << r.method << ',' << to_string(r.mode) << ',' << r.max_track_err.n << ',' << r.max_track_err.mean << ','
        << r.max_track_err.std << ',' << r.max_track_err.worst << ',' << r.goal_err.mean << ',' << r.goal_err.std
        << ',' << r.goal_err.worst << '\n';
  return out.str();
}

/// One row per step: nominal state, executed state, applied control (empty on
/// the last row) and the tracking error.
inline void write_trace_csv(const std::string& path, const ExecutionTrace& tr, const std::string& comment = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  if (!comment.empty()) out << "# " << comment << '\n';
  const Eigen::Index nx = tr.nominal.states.front().size();
  const Eigen::Index nu = tr.nominal.controls.empty() ? 0 : tr.nominal.controls.front().size();
  out << "step";
  for (Eigen::Index i = 0; i < nx; ++i) out << ",x" << i;
  for (Eigen::Index i = 0; i < nx; ++i) out << ",xt" << i;
  for (Eigen::Index i = 0; i < nu; ++i) out << ",u" << i;
  out << ",err\n";
  for (std::size_t k = 0; k < tr.executed_states.size(); ++k) {
    out << k;
    for (Eigen::Index i = 0; i < nx; ++i) out << ',' << tr.nominal.states[k][i];
    for (Eigen::Index i = 0; i < nx; ++i) out << ',' << tr.executed_states[k][i];
    for (Eigen::Index i = 0; i < nu; ++i) {
      out << ',';
      if (k < tr.applied_controls.size()) out << tr.applied_controls[k][i];
    }
    out << ',' << tr.per_step_err[k] << '\n';
  }
  if (!out) throw Error("write failed for " + path);
}

}  // namespace lmtd
