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

// LMTD-RRT and the naive kinodynamic RRT baseline.

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmtd/core.hpp"
#include "lmtd/domain.hpp"
#include "lmtd/dynamics.hpp"
#include "lmtd/feedback.hpp"
#include "lmtd/json_io.hpp"
#include "lmtd/model.hpp"
#include "lmtd/nn_index.hpp"

namespace lmtd {

struct PlanProblem {
  StateVec x_i;
  StateVec x_g;
  double lambda = 0.25;
  std::vector<Box> obstacles;  // over the position coordinates
  SystemSpec system;

  void validate() const {
    system.validate();
    if (x_i.size() != system.dim_x || x_g.size() != system.dim_x)
      throw Error("PlanProblem: start/goal dimension mismatch");
    if (!(lambda > 0.0)) throw Error("PlanProblem: lambda must be positive");
    for (const auto& b : obstacles)
      if (b.dim() != system.position_dims) throw Error("PlanProblem: obstacle dimension must match position dims");
  }
};

enum class SamplingStrategy { Uniform, TrainPerturb };

inline std::string to_string(SamplingStrategy s) { return s == SamplingStrategy::Uniform ? "uniform" : "train-perturb"; }

inline SamplingStrategy sampling_from_string(const std::string& s) {
  if (s == "uniform") return SamplingStrategy::Uniform;
  if (s == "train-perturb") return SamplingStrategy::TrainPerturb;
  throw Error("unknown sampling strategy '" + s + "'");
}

struct PlannerConfig {
  int n_samples = 16;
  double goal_bias = 0.1;
  SamplingStrategy state_sampling = SamplingStrategy::TrainPerturb;
  SamplingStrategy control_sampling = SamplingStrategy::TrainPerturb;
  int perturb_neighbors = 8;
  long max_iters = 200000;
  std::uint64_t seed = 0;
  bool naive_mode = false;
  double bounding_radius = 0.0;     // added to ε in collision checks
  double collision_epsilon = -1.0;  // naive mode only; negative uses the domain's ε or 0

  void validate() const {
    if (n_samples < 1) throw Error("PlannerConfig: n_samples must be >= 1");
    if (!(goal_bias >= 0.0 && goal_bias <= 1.0)) throw Error("PlannerConfig: goal_bias must lie in [0, 1]");
    if (perturb_neighbors < 1) throw Error("PlannerConfig: perturb_neighbors must be >= 1");
    if (max_iters < 1) throw Error("PlannerConfig: max_iters must be >= 1");
    if (bounding_radius < 0.0) throw Error("PlannerConfig: bounding_radius must be nonnegative");
  }
};

struct Trajectory {
  std::vector<StateVec> states;
  std::vector<ControlVec> controls;
  std::vector<OneStepCertificate> certificates;
  OneStepCertificate goal_cert;
  bool naive = false;

  std::size_t steps() const { return controls.size(); }
};

struct PlanResult {
  std::optional<Trajectory> trajectory;
  long iterations = 0;
  std::size_t tree_size = 0;
  double wall_time = 0.0;
  std::string failure;

  bool ok() const { return trajectory.has_value(); }
};

/// Closed-form distance from p to an axis-aligned box (0 inside).
inline double point_box_distance(const Vec& p, const Box& b) {
  double d2 = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double e = std::max({b.lo[i] - p[i], 0.0, p[i] - b.hi[i]});
    d2 += e * e;
  }
  return std::sqrt(d2);
}

/// True iff the closed ball of radius `inflation` about the position part of x
/// meets an obstacle.
inline bool in_collision(const StateVec& x, double inflation, const std::vector<Box>& obstacles, int position_dims) {
  if (position_dims < 1 || position_dims > x.size()) throw Error("in_collision: bad position dimension count");
  const Vec p = x.head(position_dims);
  for (const auto& b : obstacles) {
    if (b.dim() != position_dims) throw Error("in_collision: obstacle dimension mismatch");
    if (point_box_distance(p, b) <= inflation) return true;
  }
  return false;
}

inline bool in_collision(const StateVec& x, double inflation, const PlanProblem& prob) {
  return in_collision(x, inflation, prob.obstacles, prob.system.position_dims);
}

/// Goal with probability goal_bias; otherwise uniform over the state box or a
/// uniform S_X point moved by a uniform vector of norm at most r − ε.
inline StateVec sample_state(const PlanProblem& prob, const PlannerConfig& cfg, const TrustedDomain* td, Rng& rng) {
  if (cfg.goal_bias > 0.0 && rng.uniform() < cfg.goal_bias) return prob.x_g;
  if (cfg.state_sampling == SamplingStrategy::TrainPerturb && td) {
    const std::size_t k = rng.index(td->state_index->size());
    return td->state_index->point(k) + rng.uniform_in_ball(prob.system.dim_x, std::max(0.0, td->margin()));
  }
  return rng.uniform_in(prob.system.state_box);
}

namespace detail {

/// Nearest neighbor over a growing node set: a k-d tree over a prefix, rebuilt
/// when the linear tail outgrows it.
class GrowingIndex {
 public:
  explicit GrowingIndex(int dim) : dim_(dim) {}

  void add(const StateVec& x) {
    nodes_.push_back(x);
    if (nodes_.size() - indexed_ > std::max<std::size_t>(64, indexed_)) rebuild();
  }

  std::size_t nearest(const StateVec& q) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    if (indexed_ > 0) {
      const auto hit = index_.nearest(q);
      best = hit.index;
      best_d = hit.distance;
    }
    for (std::size_t i = indexed_; i < nodes_.size(); ++i) {
      const double d = (nodes_[i] - q).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  std::size_t size() const { return nodes_.size(); }
  const StateVec& operator[](std::size_t i) const { return nodes_[i]; }

 private:
  void rebuild() {
    Mat pts(dim_, static_cast<Eigen::Index>(nodes_.size()));
    for (std::size_t i = 0; i < nodes_.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = nodes_[i];
    index_ = NnIndex(std::move(pts));
    indexed_ = nodes_.size();
  }

  int dim_;
  std::vector<StateVec> nodes_;
  NnIndex index_;
  std::size_t indexed_ = 0;
};

struct TreeNode {
  std::size_t parent = 0;
  ControlVec control;
  OneStepCertificate cert;
};

inline Trajectory construct_path(const GrowingIndex& states, const std::vector<TreeNode>& tree, std::size_t leaf) {
  std::vector<std::size_t> chain{leaf};
  while (chain.back() != 0) chain.push_back(tree[chain.back()].parent);
  Trajectory t;
  for (std::size_t k = chain.size(); k-- > 0;) {
    t.states.push_back(states[chain[k]]);
    if (k + 1 < chain.size()) {
      t.controls.push_back(tree[chain[k]].control);
      t.certificates.push_back(tree[chain[k]].cert);
    }
  }
  return t;
}

inline double collision_inflation(const TrustedDomain* td, const PlannerConfig& cfg) {
  if (!cfg.naive_mode) return td->epsilon + cfg.bounding_radius;
  const double eps = cfg.collision_epsilon >= 0.0 ? cfg.collision_epsilon : (td ? td->epsilon : 0.0);
  return eps + cfg.bounding_radius;
}

}  // namespace detail

/// Grows a tree from x_I. In LMTD mode new states are rejected unless some
/// S_X point lies within r − ε, each (x_near, u) pair must pass the S_D
/// distance test, the one-step certificate and the optimistic next-state test,
/// and the search ends only at a state within λ of the goal whose hold check
/// passes. Naive mode keeps only the goal-distance and collision tests.
inline PlanResult plan(const ControlAffineModel& m, const TrustedDomain* td, const PlanProblem& prob,
                       const PlannerConfig& cfg, Rng& rng) {
  prob.validate();
  cfg.validate();
  if (!cfg.naive_mode && !td) throw Error("plan: LMTD mode requires a trusted domain");
  if (m.system().dim_x != prob.system.dim_x || m.system().dim_u != prob.system.dim_u)
    throw Error("plan: model and problem systems differ");
  const auto t0 = std::chrono::steady_clock::now();
  const double inflation = detail::collision_inflation(td, cfg);
  if (in_collision(prob.x_i, inflation, prob)) throw Error("plan: start state is in collision");
  const double margin = td ? td->margin() : 0.0;
  const bool lmtd = !cfg.naive_mode;

  PlanResult result;
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto finish = [&](std::size_t leaf, const detail::GrowingIndex& states, const std::vector<detail::TreeNode>& tree,
                    const OneStepCertificate& goal) {
    Trajectory t = detail::construct_path(states, tree, leaf);
    t.goal_cert = goal;
    t.naive = cfg.naive_mode;
    result.trajectory = std::move(t);
    result.tree_size = tree.size();
    result.wall_time = elapsed();
  };

  detail::GrowingIndex states(prob.system.dim_x);
  std::vector<detail::TreeNode> tree;
  states.add(prob.x_i);
  tree.push_back({0, ControlVec(), {}});

  auto goal_check = [&](const StateVec& x, OneStepCertificate& out) {
    if ((x - prob.x_g).norm() > prob.lambda) return false;
    if (!lmtd) return true;
    out = goal_invariance_check(m, *td, x);
    return out.exists;
  };

  OneStepCertificate goal;
  if (goal_check(prob.x_i, goal)) {
    finish(0, states, tree, goal);
    return result;
  }

  const Box& ubox = prob.system.control_box;
  const int nu = prob.system.dim_u;
  long iters = 0;
  while (iters < cfg.max_iters) {
    StateVec x_new;
    bool sampled = false;
    while (!sampled && iters < cfg.max_iters) {
      ++iters;
      x_new = sample_state(prob, cfg, td, rng);
      sampled = !lmtd || state_near_data(x_new, *td);
    }
    if (!sampled) break;

    const std::size_t near = states.nearest(x_new);
    const StateVec x_near = states[near];

    std::vector<NnIndex::Hit> anchors;
    if (cfg.control_sampling == SamplingStrategy::TrainPerturb && td) {
      for (const auto& h : td->state_index->k_nearest(x_near, static_cast<std::size_t>(cfg.perturb_neighbors)))
        if (h.distance <= margin) anchors.push_back(h);
    }
    auto sample_control = [&]() -> ControlVec {
      if (anchors.empty()) return rng.uniform_in(ubox);
      const auto& a = anchors[rng.index(anchors.size())];
      const double rad = std::sqrt(std::max(0.0, margin * margin - a.distance * a.distance));
      return td->s_d.u.col(static_cast<Eigen::Index>(a.index)) + rng.uniform_in_ball(nu, rad);
    };

    std::optional<ControlVec> u_best;
    StateVec x_best;
    OneStepCertificate cert_best;
    double d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < cfg.n_samples; ++i) {
      const ControlVec u = sample_control();
      if (lmtd && !in_d_epsilon(concat(x_near, u), *td)) continue;
      const StateVec x_next = m.eval(x_near, u);
      if (!x_next.allFinite()) continue;
      const double dg = (x_next - prob.x_g).norm();
      if (!(dg < d)) continue;
      if (in_collision(x_next, inflation, prob)) continue;
      OneStepCertificate cert;
      if (lmtd) {
        if (!state_near_data(x_next, *td)) continue;
        cert = one_step_exists(m, *td, x_near, u, x_next);
        if (!cert.exists) continue;
      } else {
        cert.u_nominal = u;
      }
      u_best = u;
      x_best = x_next;
      cert_best = cert;
      d = dg;
    }
    if (!u_best) continue;
    states.add(x_best);
    tree.push_back({near, *u_best, cert_best});
    if (goal_check(x_best, goal)) {
      result.iterations = iters;
      finish(tree.size() - 1, states, tree, goal);
      return result;
    }
  }
  result.iterations = iters;
  result.tree_size = tree.size();
  result.wall_time = elapsed();
  result.failure = "timeout after " + std::to_string(iters) + " iterations (tree size " +
                   std::to_string(tree.size()) + ")";
  return result;
}

inline PlanResult plan(const ControlAffineModel& m, const TrustedDomain* td, const PlanProblem& prob,
                       const PlannerConfig& cfg) {
  Rng rng(cfg.seed);
  return plan(m, td, prob, cfg, rng);
}

// ---------------------------------------------------------------------------
// Audit

struct AuditReport {
  std::vector<std::string> issues;
  bool ok() const { return issues.empty(); }
};

/// Re-checks a returned trajectory from scratch: exact model replay, goal
/// tolerance, collisions, and in LMTD mode every pair, state and certificate.
inline AuditReport audit_trajectory(const ControlAffineModel& m, const TrustedDomain* td, const PlanProblem& prob,
                                    const PlannerConfig& cfg, const Trajectory& t) {
  AuditReport rep;
  auto issue = [&](const std::string& s) { rep.issues.push_back(s); };
  if (t.states.size() != t.controls.size() + 1) {
    issue("state/control count mismatch");
    return rep;
  }
  const double inflation = detail::collision_inflation(td, cfg);
  if ((t.states.front() - prob.x_i).norm() != 0.0) issue("trajectory does not start at x_I");
  if ((t.states.back() - prob.x_g).norm() > prob.lambda) issue("final state outside lambda of the goal");
  for (std::size_t k = 0; k < t.states.size(); ++k)
    if (in_collision(t.states[k], inflation, prob)) issue("state " + std::to_string(k) + " in collision");
  for (std::size_t k = 0; k < t.controls.size(); ++k) {
    const StateVec next = m.eval(t.states[k], t.controls[k]);
    if (next != t.states[k + 1]) issue("state " + std::to_string(k + 1) + " does not replay exactly");
    if (cfg.naive_mode) continue;
    if (!in_d_epsilon(concat(t.states[k], t.controls[k]), *td)) issue("pair " + std::to_string(k) + " outside D_eps");
    if (!state_near_data(t.states[k + 1], *td)) issue("state " + std::to_string(k + 1) + " far from S_X");
    if (!one_step_exists(m, *td, t.states[k], t.controls[k], t.states[k + 1]).exists)
      issue("step " + std::to_string(k) + " has no one-step certificate");
  }
  if (!cfg.naive_mode && !goal_invariance_check(m, *td, t.states.back()).exists) issue("goal hold check fails");
  return rep;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json certificate_to_json(const OneStepCertificate& c) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"exists", c.exists},         {"u_pert", num(c.u_pert)},
          {"sigma_min", c.sigma_min},   {"nonsingular_margin", num(c.nonsingular_margin)},
          {"control_ok", c.control_ok}, {"in_domain", c.in_domain}};
}

inline std::vector<Box> obstacles_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error("obstacle file must hold a JSON list of boxes");
  std::vector<Box> out;
  for (const auto& b : j) out.push_back(box_from_json(b));
  return out;
}

inline nlohmann::json obstacles_to_json(const std::vector<Box>& obs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& b : obs) a.push_back(box_to_json(b));
  return a;
}

inline nlohmann::json problem_to_json(const PlanProblem& p) {
  return {{"system", p.system.name},
          {"x_i", vec_to_json(p.x_i)},
          {"x_g", vec_to_json(p.x_g)},
          {"lambda", p.lambda},
          {"obstacles", obstacles_to_json(p.obstacles)}};
}

inline PlanProblem problem_from_json(const nlohmann::json& j) {
  PlanProblem p;
  p.system = system_by_name(j.at("system").get<std::string>());
  p.x_i = vec_from_json(j.at("x_i"));
  p.x_g = vec_from_json(j.at("x_g"));
  p.lambda = j.at("lambda").get<double>();
  p.obstacles = obstacles_from_json(j.value("obstacles", nlohmann::json::array()));
  p.validate();
  return p;
}

inline nlohmann::json planner_config_to_json(const PlannerConfig& c) {
  return {{"n_samples", c.n_samples},
          {"goal_bias", c.goal_bias},
          {"state_sampling", to_string(c.state_sampling)},
          {"control_sampling", to_string(c.control_sampling)},
          {"perturb_neighbors", c.perturb_neighbors},
          {"max_iters", c.max_iters},
          {"seed", c.seed},
          {"naive_mode", c.naive_mode},
          {"bounding_radius", c.bounding_radius},
          {"collision_epsilon", c.collision_epsilon}};
}

inline PlannerConfig planner_config_from_json(const nlohmann::json& j, PlannerConfig c = {}) {
  c.n_samples = j.value("n_samples", c.n_samples);
  c.goal_bias = j.value("goal_bias", c.goal_bias);
  if (j.contains("state_sampling")) c.state_sampling = sampling_from_string(j.at("state_sampling"));
  if (j.contains("control_sampling")) c.control_sampling = sampling_from_string(j.at("control_sampling"));
  c.perturb_neighbors = j.value("perturb_neighbors", c.perturb_neighbors);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.seed = j.value("seed", c.seed);
  c.naive_mode = j.value("naive_mode", c.naive_mode);
  c.bounding_radius = j.value("bounding_radius", c.bounding_radius);
  c.collision_epsilon = j.value("collision_epsilon", c.collision_epsilon);
  c.validate();
  return c;
}

inline nlohmann::json plan_to_json(const PlanProblem& prob, const PlannerConfig& cfg, const PlanResult& res) {
  nlohmann::json j{{"problem", problem_to_json(prob)},
                   {"config", planner_config_to_json(cfg)},
                   {"seed", cfg.seed},
                   {"iters", res.iterations},
                   {"tree_size", res.tree_size},
                   {"wall_time", res.wall_time},
                   {"found", res.ok()}};
  if (!res.ok()) {
    j["failure"] = res.failure;
    return j;
  }
  const Trajectory& t = *res.trajectory;
  nlohmann::json states = nlohmann::json::array(), controls = nlohmann::json::array(),
                 certs = nlohmann::json::array();
  for (const auto& x : t.states) states.push_back(vec_to_json(x));
  for (const auto& u : t.controls) controls.push_back(vec_to_json(u));
  for (const auto& c : t.certificates) certs.push_back(certificate_to_json(c));
  j["states"] = states;
  j["controls"] = controls;
  j["certificates"] = certs;
  j["goal_cert"] = certificate_to_json(t.goal_cert);
  j["naive"] = t.naive;
  return j;
}

/// Trajectory part of a plan document (certificates are not restored).
inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  if (!j.value("found", false)) throw Error("plan document holds no trajectory");
  Trajectory t;
  for (const auto& x : j.at("states")) t.states.push_back(vec_from_json(x));
  for (const auto& u : j.at("controls")) t.controls.push_back(vec_from_json(u));
  t.naive = j.value("naive", false);
  if (t.states.size() != t.controls.size() + 1) throw Error("plan document: state/control count mismatch");
  return t;
}

}  // namespace lmtd
