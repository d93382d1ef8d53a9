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

// Trusted domain D: the union of r-balls about a filtered subset S_D of the
// training pairs, inside which ‖f − g‖ ≤ ε = L̂_{f−g}·r + e_T.

#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmtd/core.hpp"
#include "lmtd/dynamics.hpp"
#include "lmtd/lipschitz.hpp"
#include "lmtd/model.hpp"
#include "lmtd/nn_index.hpp"

namespace lmtd {

struct ErrorStats {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
  std::vector<double> errors;
};

/// Per-sample ‖ȳ − g(x̄, ū)‖ with their mean and standard deviation.
inline ErrorStats error_stats(const Dataset& s, const ControlAffineModel& m) {
  s.validate();
  if (s.empty()) throw Error("error_stats: empty dataset");
  ErrorStats st;
  st.errors.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    st.errors[i] = (s.y.col(c) - m.eval(s.x.col(c), s.u.col(c))).norm();
  }
  double sum = 0.0;
  for (double e : st.errors) sum += e;
  st.mu = sum / static_cast<double>(st.errors.size());
  double ss = 0.0;
  for (double e : st.errors) ss += (e - st.mu) * (e - st.mu);
  st.sigma = std::sqrt(ss / static_cast<double>(st.errors.size()));
  return st;
}

/// Indices (ascending) of samples whose error is at most μ + aσ.
inline std::vector<std::size_t> filter_indices(const std::vector<double>& errors, double mu, double sigma, double a) {
  if (a < 0.0) throw Error("filter_sd: a must be nonnegative");
  const double threshold = mu + a * sigma;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (errors[i] <= threshold) keep.push_back(i);
  if (keep.empty()) throw Error("filter_sd: no sample has error <= mu + a*sigma");
  return keep;
}

inline Dataset filter_sd(const Dataset& s, const std::vector<double>& errors, double mu, double sigma, double a) {
  if (errors.size() != s.size()) throw Error("filter_sd: error count does not match dataset");
  return s.subset(filter_indices(errors, mu, sigma, a));
}

/// ε = L_{f−g}·b + e_T.
inline double compute_epsilon(double l_fg, double b, double e_t) {
  if (l_fg < 0.0 || b < 0.0 || e_t < 0.0) throw Error("compute_epsilon: arguments must be nonnegative");
  return l_fg * b + e_t;
}

/// Draws from the union of closed r-balls about the index points. With overlap
/// correction the draw is uniform over the union: a ball is picked uniformly,
/// a point is drawn uniformly in it and kept with probability 1/(number of
/// balls covering it). Without correction the draw follows the ball mixture.
class BallUnionSampler {
 public:
  BallUnionSampler(std::shared_ptr<const NnIndex> centers, double radius, bool overlap_correction = true)
      : centers_(std::move(centers)), radius_(radius), correct_(overlap_correction) {
    if (!centers_ || centers_->empty()) throw Error("BallUnionSampler: no centers");
    if (!(radius > 0.0)) throw Error("BallUnionSampler: radius must be positive");
  }

  Vec operator()(Rng& rng) const {
    for (;;) {
      const std::size_t k = rng.index(centers_->size());
      Vec p = centers_->point(k) + rng.uniform_in_ball(centers_->dim(), radius_);
      if (!correct_) return p;
      const std::size_t cover = std::max<std::size_t>(1, centers_->count_within(p, radius_));
      if (cover == 1 || rng.uniform() * static_cast<double>(cover) < 1.0) return p;
    }
  }

  double radius() const { return radius_; }

 private:
  std::shared_ptr<const NnIndex> centers_;
  double radius_;
  bool correct_;
};

inline Mat pair_matrix(const Dataset& d) {
  Mat z(d.dim_x() + d.dim_u(), d.x.cols());
  z.topRows(d.dim_x()) = d.x;
  z.bottomRows(d.dim_u()) = d.u;
  return z;
}

struct TrustedDomain {
  SystemSpec system;
  Dataset s_d;
  std::shared_ptr<const NnIndex> pair_index;   // (x̄, ū) of S_D
  std::shared_ptr<const NnIndex> state_index;  // x̄ of S_D, i.e. S_X
  double r = 0.0;
  double epsilon = 0.0;
  double e_t = 0.0;
  double a = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  LipschitzEstimate l_fg, l_g0, l_g1;
  double rho = 0.975;
  double rho_cubed = 0.0;  // joint probability that all three estimates hold
  int iterations = 0;
  std::uint64_t seed = 0;
  std::string lipschitz_source;

  /// Distance budget r − ε for the single-neighbor D_ε test.
  double margin() const { return r - epsilon; }

  void build_indexes() {
    pair_index = std::make_shared<const NnIndex>(pair_matrix(s_d));
    state_index = std::make_shared<const NnIndex>(s_d.x);
  }
};

/// Sufficient test for (x, u) ∈ D_ε: some pair of S_D lies within r − ε.
/// A false result does not prove the point lies outside D_ε.
inline bool in_d_epsilon(const Vec& pair, const TrustedDomain& td) {
  return td.pair_index->nearest(pair).distance <= td.margin();
}

/// Optimistic state test: some x̄ of S_D lies within r − ε of x.
inline bool state_near_data(const StateVec& x, const TrustedDomain& td) {
  return td.state_index->nearest(x).distance <= td.margin();
}

/// Monte-Carlo lower bound on the dispersion of the index points in the domain
/// covered by `sample`.
inline double dispersion_brute(const NnIndex& s_d, const PointSampler& sample, int n_probe, Rng& rng) {
  if (n_probe < 1) throw Error("dispersion_brute: n_probe must be >= 1");
  double worst = 0.0;
  for (int i = 0; i < n_probe; ++i) worst = std::max(worst, s_d.nearest(sample(rng)).distance);
  return worst;
}

// ---------------------------------------------------------------------------
// Selecting r and D

/// Lipschitz estimators for a candidate radius: the model error over D(r), and
/// g0 / g1 over the projection of D(r) onto the state space.
struct DomainEstimators {
  std::function<LipschitzResult(double r, int iteration)> model_error;
  std::function<LipschitzResult(double r)> g0;
  std::function<LipschitzResult(double r)> g1;
};

struct DomainConfig {
  double a = 3.0;
  double alpha_step = 0.0;  // 0 selects 1e-3·(μ + aσ)
  double r_init = 0.0;      // optional larger starting radius
  int max_iters = 50;
  double rho = 0.975;
  std::uint64_t seed = 0;
};

struct DomainIteration {
  double r = 0.0;
  double l_fg = 0.0;
  double epsilon = 0.0;
};

struct DomainResult {
  std::optional<TrustedDomain> domain;
  std::string failure;
  std::vector<DomainIteration> log;

  bool ok() const { return domain.has_value(); }
};

/// Grows r from max(μ + aσ, r_init): estimate L̂_{f−g} over D(r), set
/// ε = L̂·r + e_T, fail if L̂ ≥ 1, accept if r > ε, else retry with r = ε + α.
/// On acceptance r > e_T / (1 − L̂), which is what the D_ε test relies on.
inline DomainResult select_r_and_domain(const Dataset& s_d, double e_t, double mu, double sigma,
                                        const DomainConfig& cfg, const DomainEstimators& est,
                                        const SystemSpec& system = {}) {
  if (s_d.empty()) throw Error("select_r_and_domain: S_D is empty");
  if (cfg.a < 0.0) throw Error("select_r_and_domain: a must be nonnegative");
  const double r0 = mu + cfg.a * sigma;
  const double alpha = cfg.alpha_step > 0.0 ? cfg.alpha_step : 1e-3 * r0;
  if (!(alpha > 0.0)) throw Error("select_r_and_domain: alpha_step must be positive (mu + a*sigma is zero)");

  DomainResult out;
  double r = std::max(r0, cfg.r_init);
  if (!(r > 0.0)) r = alpha;
  for (int it = 0; it < cfg.max_iters; ++it) {
    LipschitzResult fg = est.model_error(r, it);
    if (!fg.ok()) {
      out.failure = "L_{f-g} estimation failed at r = " + std::to_string(r) + ": " + fg.failure;
      return out;
    }
    const double l = fg.estimate->l_hat;
    const double eps = compute_epsilon(l, r, e_t);
    out.log.push_back({r, l, eps});
    if (l >= 1.0) {
      out.failure = "estimated L_{f-g} = " + std::to_string(l) + " >= 1";
      return out;
    }
    if (r > eps) {
      TrustedDomain td;
      td.system = system;
      td.s_d = s_d;
      td.r = r;
      td.epsilon = eps;
      td.e_t = e_t;
      td.a = cfg.a;
      td.mu = mu;
      td.sigma = sigma;
      td.l_fg = *fg.estimate;
      td.l_fg.target = LipschitzTarget::ModelError;
      td.rho = cfg.rho;
      td.rho_cubed = cfg.rho * cfg.rho * cfg.rho;
      td.iterations = it + 1;
      td.seed = cfg.seed;
      LipschitzResult g0 = est.g0(r);
      if (!g0.ok()) {
        out.failure = "L_{g0} estimation failed: " + g0.failure;
        return out;
      }
      LipschitzResult g1 = est.g1(r);
      if (!g1.ok()) {
        out.failure = "L_{g1} estimation failed: " + g1.failure;
        return out;
      }
      td.l_g0 = *g0.estimate;
      td.l_g0.target = LipschitzTarget::G0;
      td.l_g1 = *g1.estimate;
      td.l_g1.target = LipschitzTarget::G1;
      td.build_indexes();
      out.domain = std::move(td);
      return out;
    }
    r = eps + alpha;
  }
  throw Error("select_r_and_domain: no admissible r after " + std::to_string(cfg.max_iters) + " iterations");
}

enum class LipschitzSource { Oracle, Psi };

inline std::string to_string(LipschitzSource s) { return s == LipschitzSource::Oracle ? "oracle" : "psi"; }

inline LipschitzSource lipschitz_source_from_string(const std::string& s) {
  if (s == "oracle") return LipschitzSource::Oracle;
  if (s == "psi") return LipschitzSource::Psi;
  throw Error("unknown lipschitz source '" + s + "'");
}

/// Standard estimators for a trained model.
///   Oracle: pairs drawn uniformly over D(r) and labelled by querying `truth`.
///   Psi:    pairs subsampled from the Ψ points that fall inside D(r).
/// g0 and g1 (flattened, Frobenius norm, which bounds the induced 2-norm) are
/// estimated over the ball mixture about S_X with radius r.
inline DomainEstimators make_domain_estimators(const ControlAffineModel& model, const Dataset& s_d,
                                               const TrueDynamics& truth, const Dataset& psi, LipschitzSource source,
                                               SlopeSampleConfig slope_cfg, double rho) {
  const int nx = model.system().dim_x;
  auto pairs = std::make_shared<const NnIndex>(pair_matrix(s_d));
  auto states = std::make_shared<const NnIndex>(s_d.x);
  DomainEstimators est;

  est.model_error = [=, &model](double r, int iteration) {
    SlopeSampleConfig cfg = slope_cfg;
    cfg.seed = derive_seed(slope_cfg.seed, 1000 + static_cast<std::uint64_t>(iteration));
    if (source == LipschitzSource::Oracle) {
      if (!truth) throw Error("oracle Lipschitz source requires the true dynamics");
      BallUnionSampler sampler(pairs, r, true);
      VectorFn h = [&model, truth, nx](const Vec& z) {
        const Vec x = z.head(nx), u = z.tail(z.size() - nx);
        return Vec(truth(x, u) - model.eval(x, u));
      };
      return estimate_lipschitz(h, std::cref(sampler), cfg, rho, LipschitzTarget::ModelError);
    }
    // Ψ restricted to D(r).
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < psi.size(); ++i)
      if (pairs->nearest(psi.pair(i)).distance < r) inside.push_back(i);
    if (inside.size() < 2) {
      LipschitzResult fail;
      fail.failure = "fewer than two Psi samples inside D";
      return fail;
    }
    const Dataset sub = psi.subset(inside);
    auto sub_index = std::make_shared<const NnIndex>(pair_matrix(sub));
    auto residual = std::make_shared<Mat>(sub.y.rows(), sub.y.cols());
    for (std::size_t i = 0; i < sub.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      residual->col(c) = sub.y.col(c) - model.eval(sub.x.col(c), sub.u.col(c));
    }
    PointSampler sampler = [sub_index](Rng& rng) { return sub_index->point(rng.index(sub_index->size())); };
    VectorFn h = [sub_index, residual](const Vec& z) {
      const auto hit = sub_index->nearest(z);
      if (hit.distance != 0.0) throw Error("Psi lookup: point is not a Psi sample");
      return Vec(residual->col(static_cast<Eigen::Index>(hit.index)));
    };
    return estimate_lipschitz(h, sampler, cfg, rho, LipschitzTarget::ModelError);
  };

  est.g0 = [=, &model](double r) {
    SlopeSampleConfig cfg = slope_cfg;
    cfg.seed = derive_seed(slope_cfg.seed, 1);
    BallUnionSampler sampler(states, r, false);
    VectorFn h = [&model](const Vec& x) { return model.eval_g0(x); };
    return estimate_lipschitz(h, std::cref(sampler), cfg, rho, LipschitzTarget::G0);
  };

  est.g1 = [=, &model](double r) {
    SlopeSampleConfig cfg = slope_cfg;
    cfg.seed = derive_seed(slope_cfg.seed, 2);
    BallUnionSampler sampler(states, r, false);
    VectorFn h = [&model](const Vec& x) {
      const Mat g = model.eval_g1(x);
      return Vec(Eigen::Map<const Vec>(g.data(), g.size()));
    };
    return estimate_lipschitz(h, std::cref(sampler), cfg, rho, LipschitzTarget::G1);
  };
  return est;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json domain_summary(const TrustedDomain& td) {
  return {{"system", td.system.name},
          {"r", td.r},
          {"epsilon", td.epsilon},
          {"e_t", td.e_t},
          {"a", td.a},
          {"mu", td.mu},
          {"sigma", td.sigma},
          {"n_sd", td.s_d.size()},
          {"l_fg", estimate_report(td.l_fg)},
          {"l_g0", estimate_report(td.l_g0)},
          {"l_g1", estimate_report(td.l_g1)},
          {"rho", td.rho},
          {"rho_cubed", td.rho_cubed},
          {"iterations", td.iterations},
          {"lipschitz_source", td.lipschitz_source},
          {"seed", td.seed}};
}

namespace detail {

inline LipschitzEstimate estimate_from_report(const nlohmann::json& j) {
  LipschitzEstimate e;
  const auto target = j.at("target").get<std::string>();
  e.target = target == "f-g" ? LipschitzTarget::ModelError
             : target == "g0" ? LipschitzTarget::G0
             : target == "g1" ? LipschitzTarget::G1
                              : LipschitzTarget::Other;
  e.l_hat = j.at("l_hat").get<double>();
  e.c = j.at("c").get<double>();
  e.rho = j.at("rho").get<double>();
  e.fit.gamma_hat = j.at("gamma_hat").get<double>();
  e.fit.alpha_hat = j.at("alpha_hat").get<double>();
  e.fit.beta_hat = j.at("beta_hat").get<double>();
  e.fit.xi = j.at("xi").get<double>();
  e.fit.ks_p = j.at("ks_p").get<double>();
  e.fit.n_samples = j.at("n_s").get<std::size_t>();
  e.n_l = j.at("n_l").get<int>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.degenerate = j.value("degenerate", false);
  return e;
}

}  // namespace detail

/// Rebuilds a domain from its summary and the S_D samples.
inline TrustedDomain domain_from_summary(const nlohmann::json& j, Dataset s_d) {
  try {
    TrustedDomain td;
    td.system = system_by_name(j.at("system").get<std::string>());
    td.s_d = std::move(s_d);
    td.r = j.at("r").get<double>();
    td.epsilon = j.at("epsilon").get<double>();
    td.e_t = j.at("e_t").get<double>();
    td.a = j.at("a").get<double>();
    td.mu = j.value("mu", 0.0);
    td.sigma = j.value("sigma", 0.0);
    td.l_fg = detail::estimate_from_report(j.at("l_fg"));
    td.l_g0 = detail::estimate_from_report(j.at("l_g0"));
    td.l_g1 = detail::estimate_from_report(j.at("l_g1"));
    td.rho = j.at("rho").get<double>();
    td.rho_cubed = j.at("rho_cubed").get<double>();
    td.iterations = j.value("iterations", 0);
    td.lipschitz_source = j.value("lipschitz_source", std::string{});
    td.seed = j.at("seed").get<std::uint64_t>();
    if (td.s_d.size() != j.at("n_sd").get<std::size_t>()) throw Error("domain summary: n_sd does not match S_D file");
    if (!(td.r > td.epsilon)) throw Error("domain summary: r must exceed epsilon");
    td.build_indexes();
    return td;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("domain summary: malformed document: ") + e.what());
  }
}

}  // namespace lmtd
