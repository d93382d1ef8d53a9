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


// Acceptance run: prints one "[PASS] Cn" or "[FAIL] Cn" line per criterion and
// exits nonzero when any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lmtd/lmtd.hpp"

using namespace lmtd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Mat random_matrix(Rng& rng, int r, int c) { return Mat::NullaryExpr(r, c, [&] { return rng.uniform(-1.0, 1.0); }); }

// ---------------------------------------------------------------------------
// Formula checks

Outcome c1() {
  const double e = compute_epsilon(0.1919, 0.3633, 0.1161);
  return {std::abs(e - 0.1859) <= 5e-4, fmt("epsilon = %.6f (target 0.1859 +- 5e-4)", e)};
}

Outcome c2() {
  const double z = inv_normal_cdf(0.975);
  WeibullFit a, b;
  a.gamma_hat = 0.117;
  a.xi = 6.85e-4 / z;
  b.gamma_hat = 0.205;
  b.xi = 0.011 / z;
  const double la = assemble_estimate(a, 0.975).l_hat, lb = assemble_estimate(b, 0.975).l_hat;
  const bool ok = std::abs(la - 0.117685) <= 1e-9 && std::abs(lb - 0.216) <= 1e-9;
  return {ok, fmt("L = %.9f and %.9f", la, lb)};
}

Outcome c3() {
  const auto h = [](const Vec& z) { return Vec(2.0 * z); };
  int above = 0, tight = 0, failed = 0;
  for (int rep = 0; rep < 100; ++rep) {
    SlopeSampleConfig cfg;
    cfg.n_s = 50;
    cfg.n_l = 1000;
    cfg.seed = derive_seed(31337, static_cast<std::uint64_t>(rep));
    const LipschitzResult r = estimate_lipschitz(h, box_sampler(Box::cube(10, 0, 1)), cfg, 0.975);
    if (!r.ok()) {
      ++failed;
      continue;
    }
    above += r.estimate->l_hat >= 2.0;
    tight += r.estimate->l_hat <= 2.2;
  }
  std::ostringstream d;
  d << "L >= 2 in " << above << "/100, L <= 2.2 in " << tight << "/100, fit failures " << failed;
  return {above >= 90 && tight >= 95, d.str()};
}

Outcome c4() {
  Rng rng(4242);
  int in_range = 0, ks_ok = 0, failed = 0;
  double gmin = 1e9, gmax = -1e9;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> s(10000);
    for (auto& v : s) v = reverse_weibull_draw(rng, 1.0, 0.5, 2.0);
    try {
      const WeibullFit f = fit_reverse_weibull(s);
      in_range += f.gamma_hat >= 0.97 && f.gamma_hat <= 1.03;
      ks_ok += f.ks_p >= 0.05;
      gmin = std::min(gmin, f.gamma_hat);
      gmax = std::max(gmax, f.gamma_hat);
    } catch (const Error&) {
      ++failed;
    }
  }
  std::ostringstream d;
  d << "gamma in [0.97, 1.03] in " << in_range << "/50 (range " << gmin << " .. " << gmax << "), KS p >= 0.05 in "
    << ks_ok << "/50, fit failures " << failed;
  return {in_range == 50 && ks_ok >= 45, d.str()};
}

Outcome c5() {
  Rng rng(55);
  const SystemSpec sys = system_by_name("sinusoid2d");
  Mat pairs(4, 500);
  for (int j = 0; j < pairs.cols(); ++j) pairs.col(j) = rng.uniform_in(Box::cube(4, -1, 1));
  TrustedDomain td;
  td.system = sys;
  td.s_d = Dataset(2, 2);
  td.s_d.x = pairs.topRows(2);
  td.s_d.u = pairs.bottomRows(2);
  td.s_d.y = td.s_d.x;
  td.r = 0.35;
  td.epsilon = 0.12;
  td.build_indexes();
  long violations = 0;
  int queries = 0;
  while (queries < 1000) {
    const Vec q = rng.uniform_in(Box::cube(4, -1.3, 1.3));
    if (!in_d_epsilon(q, td)) continue;
    ++queries;
    const Vec nn = td.pair_index->point(td.pair_index->nearest(q).index);
    for (int k = 0; k < 1000; ++k) {
      const Vec dir = Vec::NullaryExpr(4, [&] { return rng.normal(); });
      if ((q + td.epsilon * dir.normalized() - nn).norm() > td.r) ++violations;
    }
  }
  return {violations == 0, std::to_string(queries) + " queries x 1000 probes, " + std::to_string(violations) +
                               " violations"};
}

Outcome c10() {
  Rng rng(1010);
  long mismatches = 0, queries = 0;
  for (int ds = 0; ds < 10; ++ds) {
    const int dim = 2 + ds % 11;
    const int n = 500 + 400 * ds;
    const Mat p = random_matrix(rng, dim, n);
    const NnIndex idx(p);
    for (int q = 0; q < 1000; ++q, ++queries) {
      const Vec x = Vec::NullaryExpr(dim, [&] { return rng.uniform(-1.2, 1.2); });
      // Squares summed in coordinate order, first index wins ties: the same
      // arithmetic as the index, so agreement is bit-exact.
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        double d2 = 0.0;
        for (int i = 0; i < dim; ++i) d2 += (x[i] - p(i, j)) * (x[i] - p(i, j));
        if (d2 < best) {
          best = d2;
          arg = static_cast<std::size_t>(j);
        }
      }
      const auto hit = idx.nearest(x);
      if (hit.index != arg || hit.distance != std::sqrt(best)) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(queries) + " queries over 10 datasets, " + std::to_string(mismatches) +
                               " mismatches"};
}

// Partial-pivot elimination, independent of the library's solver.
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

Outcome c11() {
  Rng rng(1111);
  double worst_solve = 0.0, worst_sigma = 0.0;
  int solved = 0;
  for (int i = 0; i < 1000; ++i) {
    const int n = 2 + i % 5;
    const Mat a = random_matrix(rng, n, n);
    Eigen::SelfAdjointEigenSolver<Mat> es(Mat(a.transpose() * a));
    const double sigma_oracle = std::sqrt(std::max(0.0, es.eigenvalues().minCoeff()));
    worst_sigma = std::max(worst_sigma, std::abs(smallest_singular_value(a) - sigma_oracle));
    if (sigma_oracle < 1e-2) continue;
    SystemSpec s;
    s.name = "oracle";
    s.dim_x = n;
    s.dim_u = n;
    s.state_box = Box::cube(n, -1, 1);
    s.control_box = Box::cube(n, -1, 1);
    s.position_dims = std::min(n, 3);
    Vec flat(a.size());
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      for (Eigen::Index c = 0; c < a.cols(); ++c) flat[r * a.cols() + c] = a(r, c);
    const ControlAffineModel m(s, std::nullopt,
                               Mlp::from_layers({DenseLayer{Mat::Zero(2, n), Vec::Zero(2)},
                                                 DenseLayer{Mat::Zero(flat.size(), 2), flat}},
                                                Activation::Relu));
    const Vec x = random_matrix(rng, n, 1), target = random_matrix(rng, n, 1);
    const Vec want = gauss_solve(a, target - x);
    worst_solve = std::max(worst_solve, (solve_one_step(m, x, target) - want).norm() / (1.0 + want.norm()));
    ++solved;
  }
  return {worst_solve <= 1e-9 && worst_sigma <= 1e-9,
          std::to_string(solved) + " solves, worst relative solve error " + fmt("%.3g", worst_solve) +
              ", worst sigma_min error " + fmt("%.3g", worst_sigma)};
}

// ---------------------------------------------------------------------------
// Pipeline checks

struct PipelineRun {
  bool ok = false;
  std::string failure;
  Evaluation ev;
  RunConfig cfg;
};

PipelineRun run_pipeline(RunConfig c) {
  PipelineRun r;
  r.cfg = c;
  try {
    stage_gen_data(c);
    stage_train(c);
    stage_estimate(c);
    stage_select_domain(c);
    r.ev = stage_evaluate(c);
    stage_plot(c);
    r.ok = true;
  } catch (const StageError& e) {
    r.failure = std::string(e.kind() == FailureKind::Domain ? "domain failure in " : "stage failure in ") + e.what();
  }
  return r;
}

Outcome c6(const PipelineRun& run) {
  if (!run.ok) return {false, run.failure};
  const auto& rep = run.ev.lmtd;
  int planned = 0, bad = 0;
  double worst = 0.0;
  for (const auto& r : rep.runs) {
    if (!r.planned) continue;
    ++planned;
    worst = std::max(worst, r.closed.max_track_err);
    bad += r.cl_failed || r.closed.max_track_err > rep.epsilon;
  }
  std::ostringstream d;
  d << planned << "/" << rep.runs.size() << " planned, worst CL tracking " << worst << " vs epsilon " << rep.epsilon
    << ", " << bad << " violations";
  return {planned == static_cast<int>(rep.runs.size()) && bad == 0, d.str()};
}

Outcome c7(const PipelineRun& run) {
  if (!run.ok) return {false, run.failure};
  const auto& rep = run.ev.lmtd;
  int bad = 0, checked = 0;
  double worst = 0.0;
  for (const auto& r : rep.runs) {
    if (!r.planned) continue;
    ++checked;
    worst = std::max(worst, r.hold_max_goal_dist);
    bad += r.hold_failed || r.hold_max_goal_dist > rep.epsilon + rep.lambda;
  }
  std::ostringstream d;
  d << checked << " holds of " << run.cfg.hold_steps << " steps, worst goal distance " << worst << " vs "
    << rep.epsilon + rep.lambda << ", " << bad << " violations";
  return {checked > 0 && bad == 0, d.str()};
}

Outcome c8(const PipelineRun& run) {
  if (!run.ok) return {false, run.failure};
  std::vector<double> lm, nv;
  for (const auto& r : run.ev.lmtd.runs)
    if (r.planned) lm.push_back(r.closed.max_track_err);
  // A naive closed loop whose feedback solve breaks down never tracked the plan.
  for (const auto& r : run.ev.naive.runs)
    if (r.planned) nv.push_back(r.cl_failed ? std::numeric_limits<double>::infinity() : r.closed.max_track_err);
  const double ml = median(lm), mn = median(nv);
  std::ostringstream d;
  d << "median CL tracking: naive " << mn << " (" << nv.size() << " plans), LMTD " << ml << " (" << lm.size()
    << " plans)";
  return {!lm.empty() && !nv.empty() && mn > ml, d.str()};
}

Outcome c9(const PipelineRun& run) {
  if (!run.ok) return {false, run.failure};
  const RunConfig& c = run.cfg;
  const RunPaths p{c.out_dir};
  const double inflation = run.ev.domain.epsilon + c.planner.bounding_radius;
  const int pos = c.spec().position_dims;
  int planned = 0, nominal_hits = 0, executed_hits = 0;
  for (int i = 0; i < c.n_pairs; ++i) {
    const nlohmann::json j = read_json_file(p.plan(false, i));
    if (!j.value("found", false)) continue;
    ++planned;
    for (const auto& x : trajectory_from_json(j).states) nominal_hits += in_collision(x, inflation, c.obstacles, pos);
  }
  for (const auto& r : run.ev.lmtd.runs) executed_hits += r.planned && (r.collided || r.cl_failed);
  std::ostringstream d;
  d << planned << "/" << c.n_pairs << " planned, " << nominal_hits << " nominal states within epsilon of an obstacle, "
    << executed_hits << " closed-loop runs collided or broke down";
  return {planned == c.n_pairs && nominal_hits == 0 && executed_hits == 0, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria C1 to C11"};
  std::string work = "acceptance_runs";
  std::vector<int> only;
  std::uint64_t seed = 1;
  app.add_option("--work", work, "Directory for pipeline runs");
  app.add_option("--only", only, "Run only these criteria (numbers)");
  app.add_option("--seed", seed, "Master seed for the pipeline runs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  int failures = 0;
  auto report = [&](int n, const std::function<Outcome()>& f) {
    if (!wanted(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "[PASS] C" : "[FAIL] C") << n << ": " << o.detail << fmt(" (%.1f s)", secs) << std::endl;
  };

  report(1, c1);
  report(2, c2);
  report(3, c3);
  report(4, c4);
  report(5, c5);

  if (wanted(6) || wanted(7) || wanted(8)) {
    RunConfig c = default_config("sinusoid2d");
    c.seed = seed;
    c.out_dir = (fs::path(work) / "sinusoid2d").string();
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineRun run = run_pipeline(c);
    std::cout << "# sinusoid2d pipeline: "
              << fmt("%.1f s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
              << (run.ok ? "" : ", " + run.failure) << std::endl;
    report(6, [&] { return c6(run); });
    report(7, [&] { return c7(run); });
    report(8, [&] { return c8(run); });
  }
  if (wanted(9)) {
    RunConfig c = default_config("quadrotor6d");
    c.seed = seed;
    c.out_dir = (fs::path(work) / "quadrotor6d").string();
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineRun run = run_pipeline(c);
    std::cout << "# quadrotor6d pipeline: "
              << fmt("%.1f s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
              << (run.ok ? "" : ", " + run.failure) << std::endl;
    report(9, [&] { return c9(run); });
  }
  report(10, c10);
  report(11, c11);
  return failures == 0 ? 0 : 1;
}
