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

// Statistical overestimation of Lipschitz constants from extreme value theory:
// the maximum slope over many random pairs follows a reverse Weibull law whose
// location parameter is the Lipschitz constant. We fit that law by maximum
// likelihood, check the fit with a Kolmogorov-Smirnov test, and report the
// upper end of a normal confidence interval on the location.
//
// Caveat: the KS test uses parameters estimated from the same samples, which
// makes it liberal (p-values biased upward).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmtd/core.hpp"

namespace lmtd {

using VectorFn = std::function<Vec(const Vec&)>;
using PointSampler = std::function<Vec(Rng&)>;

inline constexpr double kKsSignificance = 0.05;

// ---------------------------------------------------------------------------
// Normal distribution

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Φ⁻¹(p): Acklam's rational approximation polished with Halley steps.
inline double inv_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("inv_normal_cdf: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Slope sampling

/// Largest ‖h(z1) − h(z2)‖ / ‖z1 − z2‖ over n_l freshly sampled pairs.
inline double max_slope(const VectorFn& h, const PointSampler& sample, int n_l, Rng& rng) {
  if (n_l < 1) throw Error("max_slope: n_l must be >= 1");
  double best = 0.0;
  for (int i = 0; i < n_l; ++i) {
    Vec z1 = sample(rng), z2 = sample(rng);
    double dz = (z1 - z2).norm();
    int retries = 0;
    while (dz < 1e-12) {
      if (++retries > 100)
        throw Error("max_slope: could not draw a non-degenerate pair after 100 attempts");
      z2 = sample(rng);
      dz = (z1 - z2).norm();
    }
    const double s = (h(z1) - h(z2)).norm() / dz;
    if (!std::isfinite(s)) throw Error("max_slope: non-finite slope");
    best = std::max(best, s);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Reverse Weibull

struct WeibullFit {
  double gamma_hat = 0.0;  // location: upper support endpoint
  double alpha_hat = 0.0;  // scale
  double beta_hat = 0.0;   // shape
  double xi = 0.0;         // standard error of gamma_hat
  double ks_stat = 0.0;
  double ks_p = 0.0;
  double log_likelihood = 0.0;
  std::size_t n_samples = 0;
  // The profile likelihood peaked at the lower end of the search interval:
  // the likelihood is unbounded as γ → max s (shape < 1) and no interior MLE
  // exists. ξ is infinite when the curvature there is not negative.
  bool at_support_edge = false;
};

/// F(w) = exp(−((γ − w)/α)^β) for w < γ, 1 otherwise.
inline double reverse_weibull_cdf(double w, double gamma, double alpha, double beta) {
  if (w >= gamma) return 1.0;
  return std::exp(-std::pow((gamma - w) / alpha, beta));
}

/// Inverse-CDF draw.
inline double reverse_weibull_draw(Rng& rng, double gamma, double alpha, double beta) {
  double u;
  do u = rng.uniform();
  while (u == 0.0);
  return gamma - alpha * std::pow(-std::log(u), 1.0 / beta);
}

inline double reverse_weibull_loglik(const std::vector<double>& s, double gamma, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0)) return -std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(s.size());
  double sum_log = 0.0, sum_pow = 0.0;
  for (double v : s) {
    const double t = gamma - v;
    if (!(t > 0.0)) return -std::numeric_limits<double>::infinity();
    const double lt = std::log(t / alpha);
    sum_log += lt;
    sum_pow += std::exp(beta * lt);
  }
  return n * std::log(beta) - n * std::log(alpha) + (beta - 1.0) * sum_log - sum_pow;
}

namespace detail {

struct ProfilePoint {
  double alpha = 0.0, beta = 0.0, loglik = -std::numeric_limits<double>::infinity();
};

// Two-parameter Weibull MLE on t_i = γ − s_i > 0, solving the shape equation
//   Σ t^β ln t / Σ t^β − 1/β − mean(ln t) = 0
// in log β by Newton steps safeguarded with a bisection bracket (the left side
// is increasing in β).
inline ProfilePoint weibull2_mle(const std::vector<double>& s, double gamma) {
  const std::size_t n = s.size();
  std::vector<double> lt(n);
  double lmax = -std::numeric_limits<double>::infinity(), lmean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lt[i] = std::log(gamma - s[i]);
    lmax = std::max(lmax, lt[i]);
    lmean += lt[i];
  }
  lmean /= static_cast<double>(n);
  // Returns the shape equation value and its derivative with respect to log β.
  auto shape_eq = [&](double log_beta, double* slope) {
    const double beta = std::exp(log_beta);
    double sw = 0.0, swl = 0.0, swl2 = 0.0;
    for (double l : lt) {
      const double d = l - lmax;
      const double w = std::exp(beta * d);
      sw += w;
      swl += w * d;
      swl2 += w * d * d;
    }
    const double m = swl / sw;
    if (slope) *slope = beta * (swl2 / sw - m * m) + 1.0 / beta;
    return m + lmax - 1.0 / beta - lmean;
  };
  double lo = std::log(1e-4), hi = std::log(1e4);
  double x = 0.0;
  if (shape_eq(hi, nullptr) < 0.0) {
    x = hi;
  } else if (shape_eq(lo, nullptr) > 0.0) {
    x = lo;
  } else {
    for (int it = 0; it < 200; ++it) {
      double slope = 0.0;
      const double g = shape_eq(x, &slope);
      if (g == 0.0) break;
      (g < 0.0 ? lo : hi) = x;
      double next = x - g / slope;
      if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
      if (std::abs(next - x) < 1e-13 || hi - lo < 1e-13) {
        x = next;
        break;
      }
      x = next;
    }
  }
  ProfilePoint p;
  p.beta = std::exp(x);
  double sw = 0.0;
  for (double l : lt) sw += std::exp(p.beta * (l - lmax));
  p.alpha = std::exp(lmax + std::log(sw / static_cast<double>(n)) / p.beta);
  p.loglik = reverse_weibull_loglik(s, gamma, p.alpha, p.beta);
  return p;
}

}  // namespace detail

/// Kolmogorov limiting survival function Q(x) = P(√n D_n > x)
///   = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²x²),
/// evaluated through the equivalent Jacobi theta form for small x where the
/// alternating series converges slowly.
inline double kolmogorov_survival(double x) {
  if (!(x > 0.0)) return 1.0;
  if (x < 1.18) {
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double k_cdf = 0.0;
    for (int k = 1; k < 100; ++k) {
      const double term = std::exp(-(2.0 * k - 1.0) * (2.0 * k - 1.0) * pi2 / (8.0 * x * x));
      k_cdf += term;
      if (term < 1e-12 * k_cdf || term == 0.0) break;
    }
    k_cdf *= std::sqrt(2.0 * std::numbers::pi) / x;
    return std::clamp(1.0 - k_cdf, 0.0, 1.0);
  }
  double q = 0.0;
  for (int k = 1; k < 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    q += (k % 2 == 1 ? term : -term);
    if (term < 1e-12) break;
  }
  return std::clamp(2.0 * q, 0.0, 1.0);
}

/// One-sample KS statistic D_n = sup |F_n − F| against a reverse Weibull CDF.
inline double ks_statistic(std::vector<double> samples, double gamma, double alpha, double beta) {
  if (samples.empty()) throw Error("ks_statistic: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = reverse_weibull_cdf(samples[i], gamma, alpha, beta);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic KS p-value of the samples under the fitted reverse Weibull.
inline double ks_test(const std::vector<double>& samples, const WeibullFit& fit) {
  const double d = ks_statistic(samples, fit.gamma_hat, fit.alpha_hat, fit.beta_hat);
  return kolmogorov_survival(std::sqrt(static_cast<double>(samples.size())) * d);
}

/// The sample does not admit a reverse Weibull maximum likelihood fit.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Three-parameter reverse Weibull maximum likelihood. The location is found by
/// golden-section search on the profile likelihood over
/// γ ∈ (max s, max s + 10·range], bracketed by a log-spaced scan of γ − max s;
/// scale and shape solve the inner two-parameter problem. ξ is the square root
/// of the γγ entry of the inverse observed information, from central finite
/// differences at the optimum.
inline WeibullFit fit_reverse_weibull(const std::vector<double>& samples) {
  if (samples.size() < 20) throw Error("fit_reverse_weibull: need at least 20 samples");
  for (double v : samples)
    if (!std::isfinite(v)) throw Error("fit_reverse_weibull: non-finite sample");
  const auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
  const double smax = *mx_it, range = *mx_it - *mn_it;
  if (!(range > 0.0)) throw Error("fit_reverse_weibull: all samples are identical");

  // Scan δ = γ − max s on a log grid.
  constexpr int kGrid = 90;
  const double lo_log = std::log(1e-6 * range), hi_log = std::log(10.0 * range);
  auto delta_at = [&](double l) { return std::exp(l); };
  auto profile = [&](double l) { return detail::weibull2_mle(samples, smax + delta_at(l)).loglik; };
  int best_k = 0;
  double best_ll = -std::numeric_limits<double>::infinity();
  std::vector<double> grid(kGrid + 1);
  for (int k = 0; k <= kGrid; ++k) {
    grid[static_cast<std::size_t>(k)] = lo_log + (hi_log - lo_log) * k / kGrid;
    const double ll = profile(grid[static_cast<std::size_t>(k)]);
    if (ll > best_ll) {
      best_ll = ll;
      best_k = k;
    }
  }
  if (!std::isfinite(best_ll)) throw Error("fit_reverse_weibull: likelihood not finite on search interval");
  if (best_k == kGrid)
    throw FitError("fit_reverse_weibull: outer search did not converge (profile likelihood increases up to "
                "max s + 10·range; tail is not reverse Weibull)");

  // Golden-section refinement in log δ between the neighbours of the best grid point.
  double a = grid[static_cast<std::size_t>(std::max(best_k - 1, 0))];
  double b = grid[static_cast<std::size_t>(best_k + 1)];
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = profile(c), fd = profile(d);
  for (int it = 0; it < 200 && (b - a) > 1e-12; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = profile(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = profile(d);
    }
  }
  double l_opt = 0.5 * (a + b);
  if (profile(l_opt) < best_ll) l_opt = grid[static_cast<std::size_t>(best_k)];

  WeibullFit fit;
  fit.n_samples = samples.size();
  fit.gamma_hat = smax + delta_at(l_opt);
  fit.at_support_edge = best_k == 0;
  const auto inner = detail::weibull2_mle(samples, fit.gamma_hat);
  fit.alpha_hat = inner.alpha;
  fit.beta_hat = inner.beta;
  fit.log_likelihood = inner.loglik;

  // Observed information by central differences of the full log-likelihood.
  const double gap = fit.gamma_hat - smax;
  const double theta[3] = {fit.gamma_hat, fit.alpha_hat, fit.beta_hat};
  double step[3] = {std::min(1e-5 * std::max(std::abs(fit.gamma_hat), range), 0.25 * gap), 1e-5 * fit.alpha_hat,
                    1e-5 * fit.beta_hat};
  auto ll = [&](const double* p) { return reverse_weibull_loglik(samples, p[0], p[1], p[2]); };
  Eigen::Matrix3d info;
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      double p[3];
      auto eval = [&](double si, double sj) {
        std::copy(theta, theta + 3, p);
        p[i] += si * step[i];
        p[j] += sj * step[j];
        return ll(p);
      };
      double h2;
      if (i == j) {
        std::copy(theta, theta + 3, p);
        const double f0 = ll(p);
        p[i] = theta[i] + step[i];
        const double fp = ll(p);
        p[i] = theta[i] - step[i];
        const double fm = ll(p);
        h2 = (fp - 2.0 * f0 + fm) / (step[i] * step[i]);
      } else {
        h2 = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * step[i] * step[j]);
      }
      info(i, j) = info(j, i) = -h2;
    }
  }
  const Eigen::Matrix3d cov = info.inverse();
  if (info.llt().info() == Eigen::Success && cov.allFinite() && cov(0, 0) > 0.0) {
    fit.xi = std::sqrt(cov(0, 0));
  } else {
    // Singular or indefinite information (e.g. heavily tied samples): fall back
    // to the curvature of the profile likelihood in γ, which equals 1/(J⁻¹)_γγ
    // when the full information is regular.
    const double h = step[0];
    const double curv = -(profile(std::log(gap + h)) - 2.0 * profile(std::log(gap)) + profile(std::log(gap - h))) /
                        (h * h);
    fit.xi = (curv > 0.0 && std::isfinite(curv)) ? 1.0 / std::sqrt(curv) : std::numeric_limits<double>::infinity();
  }

  fit.ks_stat = ks_statistic(samples, fit.gamma_hat, fit.alpha_hat, fit.beta_hat);
  fit.ks_p = kolmogorov_survival(std::sqrt(static_cast<double>(samples.size())) * fit.ks_stat);
  return fit;
}

// ---------------------------------------------------------------------------
// Estimates

enum class LipschitzTarget { ModelError, G0, G1, Other };

inline std::string to_string(LipschitzTarget t) {
  switch (t) {
    case LipschitzTarget::ModelError: return "f-g";
    case LipschitzTarget::G0: return "g0";
    case LipschitzTarget::G1: return "g1";
    default: return "other";
  }
}

struct SlopeSampleConfig {
  int n_s = 50;
  int n_l = 1000;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  void validate() const {
    if (n_s < 20) throw Error("SlopeSampleConfig: n_s must be >= 20");
    if (n_l < 1) throw Error("SlopeSampleConfig: n_l must be >= 1");
  }
};

struct LipschitzEstimate {
  LipschitzTarget target = LipschitzTarget::Other;
  double l_hat = 0.0;  // γ̂ + c
  double c = 0.0;      // Φ⁻¹(ρ)·ξ
  double rho = 0.975;
  WeibullFit fit;
  // All slope samples were equal, i.e. the law is a point mass at the common
  // value (the α → 0 limit). Exact for linear maps with uniform gain.
  bool degenerate = false;
  int n_l = 0;
  std::uint64_t seed = 0;
};

/// L̂ = γ̂ + Φ⁻¹(ρ)·ξ.
inline LipschitzEstimate assemble_estimate(const WeibullFit& fit, double rho,
                                           LipschitzTarget target = LipschitzTarget::Other) {
  if (!(rho > 0.0 && rho < 1.0)) throw Error("assemble_estimate: rho must lie in (0, 1)");
  LipschitzEstimate e;
  e.target = target;
  e.rho = rho;
  e.fit = fit;
  e.c = std::max(0.0, inv_normal_cdf(rho)) * fit.xi;
  e.l_hat = fit.gamma_hat + e.c;
  return e;
}

/// Outcome of an estimation run: an estimate, or a KS rejection carrying
/// the fit that was rejected.
struct LipschitzResult {
  std::optional<LipschitzEstimate> estimate;
  WeibullFit fit;
  std::vector<double> slopes;
  std::string failure;

  bool ok() const { return estimate.has_value(); }
};

inline LipschitzResult estimate_lipschitz(const VectorFn& h, const PointSampler& sample, const SlopeSampleConfig& cfg,
                                          double rho, LipschitzTarget target = LipschitzTarget::Other) {
  cfg.validate();
  if (!(rho > 0.0 && rho < 1.0)) throw Error("estimate_lipschitz: rho must lie in (0, 1)");
  LipschitzResult result;
  result.slopes.assign(static_cast<std::size_t>(cfg.n_s), 0.0);
  parallel_for(
      static_cast<std::size_t>(cfg.n_s),
      [&](std::size_t j) {
        Rng rng(derive_seed(cfg.seed, j));
        result.slopes[j] = max_slope(h, sample, cfg.n_l, rng);
      },
      cfg.workers);

  const auto [mn, mx] = std::minmax_element(result.slopes.begin(), result.slopes.end());
  if (*mn == *mx) {
    WeibullFit point;
    point.gamma_hat = *mx;
    point.n_samples = result.slopes.size();
    point.ks_p = 1.0;
    result.fit = point;
    LipschitzEstimate e = assemble_estimate(point, rho, target);
    e.degenerate = true;
    e.n_l = cfg.n_l;
    e.seed = cfg.seed;
    result.estimate = e;
    return result;
  }

  try {
    result.fit = fit_reverse_weibull(result.slopes);
  } catch (const FitError& e) {
    result.failure = e.what();
    return result;
  }
  if (result.fit.ks_p < kKsSignificance) {
    result.failure = "KS test rejected the reverse Weibull fit (p = " + std::to_string(result.fit.ks_p) + ")";
    return result;
  }
  if (!std::isfinite(result.fit.xi)) {
    result.failure = "standard error of the location estimate is undefined";
    return result;
  }
  LipschitzEstimate e = assemble_estimate(result.fit, rho, target);
  e.n_l = cfg.n_l;
  e.seed = cfg.seed;
  result.estimate = e;
  return result;
}

inline nlohmann::json estimate_report(const LipschitzEstimate& e) {
  return {{"target", to_string(e.target)}, {"l_hat", e.l_hat},      {"gamma_hat", e.fit.gamma_hat},
          {"alpha_hat", e.fit.alpha_hat},  {"beta_hat", e.fit.beta_hat}, {"xi", e.fit.xi},
          {"c", e.c},                      {"rho", e.rho},          {"ks_p", e.fit.ks_p},
          {"n_s", e.fit.n_samples},        {"n_l", e.n_l},          {"seed", e.seed},
          {"degenerate", e.degenerate}};
}

/// Independent uniform draws from a box.
inline PointSampler box_sampler(Box box) {
  return [box = std::move(box)](Rng& rng) { return rng.uniform_in(box); };
}

}  // namespace lmtd
