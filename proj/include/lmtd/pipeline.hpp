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

// End-to-end pipeline: data generation, training, Lipschitz estimation,
// domain selection, planning and execution. Each stage reads and writes files
// under the run directory so stages compose from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmtd/core.hpp"
#include "lmtd/domain.hpp"
#include "lmtd/dynamics.hpp"
#include "lmtd/executor.hpp"
#include "lmtd/feedback.hpp"
#include "lmtd/json_io.hpp"
#include "lmtd/lipschitz.hpp"
#include "lmtd/model.hpp"
#include "lmtd/planner.hpp"

namespace lmtd {

// ---------------------------------------------------------------------------
// Sampling for data generation

/// Radical inverse of i in the given base.
inline double radical_inverse(std::uint64_t i, unsigned base) {
  if (base < 2) throw Error("radical_inverse: base must be >= 2");
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return r;
}

inline std::vector<unsigned> first_primes(std::size_t n) {
  std::vector<unsigned> p;
  for (unsigned c = 2; p.size() < n; ++c) {
    bool prime = true;
    for (unsigned q : p) {
      if (q * q > c) break;
      if (c % q == 0) {
        prime = false;
        break;
      }
    }
    if (prime) p.push_back(c);
  }
  return p;
}

/// Halton point `index` (from 1) over the box, one prime base per dimension.
inline Vec halton_point(std::uint64_t index, const Box& box) {
  const auto bases = first_primes(static_cast<std::size_t>(box.dim()));
  Vec v(box.dim());
  for (Eigen::Index d = 0; d < box.dim(); ++d)
    v[d] = box.lo[d] + (box.hi[d] - box.lo[d]) * radical_inverse(index, bases[static_cast<std::size_t>(d)]);
  return v;
}

inline Box bounding_box(const std::vector<Box>& region) {
  if (region.empty()) throw Error("bounding_box: empty region");
  Vec lo = region.front().lo, hi = region.front().hi;
  for (const auto& b : region) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  return Box(lo, hi);
}

inline bool in_region(const Vec& x, const std::vector<Box>& region) {
  for (const auto& b : region)
    if (b.contains(x)) return true;
  return false;
}

/// Uniform over a union of boxes by rejection from the bounding box.
inline StateVec sample_region(const std::vector<Box>& region, Rng& rng) {
  const Box bb = bounding_box(region);
  for (int tries = 0; tries < 100000; ++tries) {
    Vec x = rng.uniform_in(bb);
    if (in_region(x, region)) return x;
  }
  throw Error("sample_region: region has negligible volume");
}

/// The default L-shaped state region of the sinusoidal system.
inline std::vector<Box> sinusoid_l_shape() {
  return {Box(Vec::Constant(2, -5.0), (Vec(2) << 5.0, 0.0).finished()),
          Box(Vec::Constant(2, -5.0), (Vec(2) << 0.0, 5.0).finished())};
}

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  std::string system = "sinusoid2d";
  int n_train = 2000;
  int n_lipschitz = 500;
  std::string data_sampler = "uniform";  // uniform | halton
  std::vector<Box> state_region;         // empty means the state box
  Hyperparams hp;
  double a = 3.0;
  double rho = 0.975;
  double r_init = 0.0;
  double alpha_step = 0.0;
  int domain_max_iters = 50;
  SlopeSampleConfig slope;
  LipschitzSource lipschitz_source = LipschitzSource::Oracle;
  PlannerConfig planner;
  PlannerConfig naive_planner;
  double lambda = 0.3;
  int n_pairs = 10;
  double pair_min_distance = 1.0;
  int pair_attempts = 5;  // replacement pairs drawn when a plan times out
  std::vector<Box> obstacles;
  int hold_steps = 100;
  unsigned workers = 1;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  SystemSpec spec() const { return system_by_name(system); }
  std::vector<Box> region() const { return state_region.empty() ? std::vector<Box>{spec().state_box} : state_region; }
};

inline RunConfig default_config(const std::string& system) {
  RunConfig c;
  c.system = system;
  c.hp.optimizer = Optimizer::Adam;
  c.hp.activation = Activation::Relu;
  c.slope.n_s = 50;
  c.slope.n_l = 1000;
  c.planner.state_sampling = SamplingStrategy::TrainPerturb;
  c.planner.control_sampling = SamplingStrategy::TrainPerturb;
  c.naive_planner = c.planner;
  c.naive_planner.naive_mode = true;
  c.naive_planner.state_sampling = SamplingStrategy::Uniform;
  c.naive_planner.control_sampling = SamplingStrategy::Uniform;
  if (system == "sinusoid2d") {
    c.n_train = 2000;
    c.n_lipschitz = 1000;
    c.lipschitz_source = LipschitzSource::Psi;
    c.state_region = sinusoid_l_shape();
    c.hp.g0_hidden = 128;
    c.hp.g1_hidden = 128;
    c.hp.learning_rate = 3e-3;
    c.hp.lr_decay = 0.99;
    c.hp.epochs = 400;
    c.hp.batch_size = 32;
    c.hp.target_mse = 0.0;
    c.r_init = 0.6;
    c.lambda = 0.3;
    c.pair_min_distance = 1.0;
  } else if (system == "quadrotor6d") {
    c.n_train = 200000;
    c.n_lipschitz = 50000;
    c.data_sampler = "halton";
    c.hp.g0_identity = true;
    c.hp.g1_hidden = 256;
    c.hp.learning_rate = 1e-3;
    c.hp.lr_decay = 0.95;
    c.hp.epochs = 30;
    c.hp.batch_size = 64;
    c.hp.target_mse = 0.0;
    c.r_init = 0.8;
    c.lambda = 0.2;
    c.n_pairs = 20;
    c.pair_min_distance = 1.0;
    c.planner.bounding_radius = 0.05;
    c.naive_planner.bounding_radius = 0.05;
    c.obstacles = {Box((Vec(3) << -0.6, -0.6, -1.0).finished(), (Vec(3) << -0.3, -0.3, 0.4).finished()),
                   Box((Vec(3) << 0.2, -0.2, -0.4).finished(), (Vec(3) << 0.5, 0.6, 1.0).finished()),
                   Box((Vec(3) << -0.2, 0.4, -0.8).finished(), (Vec(3) << 0.1, 0.9, -0.3).finished())};
  } else {
    throw Error("unknown system '" + system + "'");
  }
  return c;
}

namespace detail {

inline nlohmann::json hp_to_json(const Hyperparams& h) {
  return {{"g0_hidden", h.g0_hidden},
          {"g1_hidden", h.g1_hidden},
          {"activation", to_string(h.activation)},
          {"g0_identity", h.g0_identity},
          {"optimizer", h.optimizer == Optimizer::Adam ? "adam" : "sgd"},
          {"learning_rate", h.learning_rate},
          {"lr_decay", h.lr_decay},
          {"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"target_mse", h.target_mse}};
}

inline Hyperparams hp_from_json(const nlohmann::json& j, Hyperparams h) {
  h.g0_hidden = j.value("g0_hidden", h.g0_hidden);
  h.g1_hidden = j.value("g1_hidden", h.g1_hidden);
  if (j.contains("activation")) h.activation = activation_from_string(j.at("activation"));
  h.g0_identity = j.value("g0_identity", h.g0_identity);
  if (j.contains("optimizer")) {
    const std::string o = j.at("optimizer");
    if (o == "adam") h.optimizer = Optimizer::Adam;
    else if (o == "sgd") h.optimizer = Optimizer::Sgd;
    else throw Error("unknown optimizer '" + o + "'");
  }
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.lr_decay = j.value("lr_decay", h.lr_decay);
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.target_mse = j.value("target_mse", h.target_mse);
  return h;
}

inline nlohmann::json boxes_to_json(const std::vector<Box>& v) { return obstacles_to_json(v); }

}  // namespace detail

inline nlohmann::json config_to_json(const RunConfig& c) {
  return {{"system", c.system},
          {"n_train", c.n_train},
          {"n_lipschitz", c.n_lipschitz},
          {"data_sampler", c.data_sampler},
          {"state_region", detail::boxes_to_json(c.state_region)},
          {"hp", detail::hp_to_json(c.hp)},
          {"a", c.a},
          {"rho", c.rho},
          {"r_init", c.r_init},
          {"alpha_step", c.alpha_step},
          {"domain_max_iters", c.domain_max_iters},
          {"n_s", c.slope.n_s},
          {"n_l", c.slope.n_l},
          {"lipschitz_source", to_string(c.lipschitz_source)},
          {"planner", planner_config_to_json(c.planner)},
          {"naive_planner", planner_config_to_json(c.naive_planner)},
          {"lambda", c.lambda},
          {"n_pairs", c.n_pairs},
          {"pair_min_distance", c.pair_min_distance},
          {"pair_attempts", c.pair_attempts},
          {"obstacles", detail::boxes_to_json(c.obstacles)},
          {"hold_steps", c.hold_steps},
          {"workers", c.workers},
          {"seed", c.seed},
          {"out_dir", c.out_dir}};
}

/// Fields absent from the document keep the system defaults.
inline RunConfig config_from_json(const nlohmann::json& j) {
  try {
    RunConfig c = default_config(j.value("system", std::string("sinusoid2d")));
    c.n_train = j.value("n_train", c.n_train);
    c.n_lipschitz = j.value("n_lipschitz", c.n_lipschitz);
    c.data_sampler = j.value("data_sampler", c.data_sampler);
    if (j.contains("state_region")) c.state_region = obstacles_from_json(j.at("state_region"));
    if (j.contains("hp")) c.hp = detail::hp_from_json(j.at("hp"), c.hp);
    c.a = j.value("a", c.a);
    c.rho = j.value("rho", c.rho);
    c.r_init = j.value("r_init", c.r_init);
    c.alpha_step = j.value("alpha_step", c.alpha_step);
    c.domain_max_iters = j.value("domain_max_iters", c.domain_max_iters);
    c.slope.n_s = j.value("n_s", c.slope.n_s);
    c.slope.n_l = j.value("n_l", c.slope.n_l);
    if (j.contains("lipschitz_source")) c.lipschitz_source = lipschitz_source_from_string(j.at("lipschitz_source"));
    if (j.contains("planner")) c.planner = planner_config_from_json(j.at("planner"), c.planner);
    if (j.contains("naive_planner")) c.naive_planner = planner_config_from_json(j.at("naive_planner"), c.naive_planner);
    c.naive_planner.naive_mode = true;
    c.planner.naive_mode = false;
    c.lambda = j.value("lambda", c.lambda);
    c.n_pairs = j.value("n_pairs", c.n_pairs);
    c.pair_min_distance = j.value("pair_min_distance", c.pair_min_distance);
    c.pair_attempts = j.value("pair_attempts", c.pair_attempts);
    if (j.contains("obstacles")) c.obstacles = obstacles_from_json(j.at("obstacles"));
    c.hold_steps = j.value("hold_steps", c.hold_steps);
    c.workers = j.value("workers", c.workers);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (c.n_train < 1 || c.n_lipschitz < 0) throw Error("config: dataset sizes must be positive");
    if (c.data_sampler != "uniform" && c.data_sampler != "halton") throw Error("config: unknown data_sampler");
    if (c.n_pairs < 1) throw Error("config: n_pairs must be >= 1");
    c.slope.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: malformed document: ") + e.what());
  }
}

/// Version, config hash and seed, embedded in every artifact.
inline nlohmann::json provenance(const RunConfig& c, std::uint64_t stage_seed) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_json(c).dump())));
  return {{"version", kVersion}, {"config_hash", hash}, {"seed", c.seed}, {"stage_seed", stage_seed}};
}

inline std::string provenance_line(const nlohmann::json& p) {
  return "version=" + p.at("version").get<std::string>() + " config_hash=" + p.at("config_hash").get<std::string>() +
         " seed=" + std::to_string(p.at("seed").get<std::uint64_t>()) +
         " stage_seed=" + std::to_string(p.at("stage_seed").get<std::uint64_t>());
}

enum StageStream : std::uint64_t { kData = 1, kPsi = 2, kTrain = 3, kLipschitz = 4, kPairs = 5, kPlan = 100 };

// ---------------------------------------------------------------------------
// Stage failures

enum class FailureKind { Stage, Domain };

/// A pipeline stage failed. Domain failures (KS rejection, L̂ ≥ 1, no
/// admissible r) are distinguished from other stage failures.
class StageError : public Error {
 public:
  StageError(std::string stage, FailureKind kind, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)), kind_(kind) {}
  const std::string& stage() const { return stage_; }
  FailureKind kind() const { return kind_; }

 private:
  std::string stage_;
  FailureKind kind_;
};

// ---------------------------------------------------------------------------
// Data

inline Dataset generate_dataset(const RunConfig& c, int n, std::uint64_t stream, DatasetRole role) {
  const SystemSpec sys = c.spec();
  const TrueDynamics f = dynamics_by_name(c.system);
  Dataset d(sys.dim_x, sys.dim_u, role);
  d.x.resize(sys.dim_x, n);
  d.u.resize(sys.dim_u, n);
  d.y.resize(sys.dim_x, n);
  const auto region = c.region();
  if (c.data_sampler == "halton") {
    const Box joint(concat(bounding_box(region).lo, sys.control_box.lo),
                    concat(bounding_box(region).hi, sys.control_box.hi));
    // Ψ continues the training sequence so the two sets never share points.
    const std::uint64_t offset = stream == kData ? 1 : static_cast<std::uint64_t>(c.n_train) + 1;
    std::uint64_t idx = offset;
    for (int i = 0; i < n; ++idx) {
      const Vec z = halton_point(idx, joint);
      if (!in_region(z.head(sys.dim_x), region)) continue;
      d.x.col(i) = z.head(sys.dim_x);
      d.u.col(i) = z.tail(sys.dim_u);
      ++i;
    }
  } else {
    Rng rng(derive_seed(c.seed, stream));
    for (int i = 0; i < n; ++i) {
      d.x.col(i) = sample_region(region, rng);
      d.u.col(i) = rng.uniform_in(sys.control_box);
    }
  }
  for (int i = 0; i < n; ++i) d.y.col(i) = f(d.x.col(i), d.u.col(i));
  return d;
}

// ---------------------------------------------------------------------------
// Run directory layout

struct RunPaths {
  std::filesystem::path dir;
  std::string train() const { return (dir / "train.csv").string(); }
  std::string psi() const { return (dir / "psi.csv").string(); }
  std::string model() const { return (dir / "model.json").string(); }
  std::string train_report() const { return (dir / "train_report.json").string(); }
  std::string estimate() const { return (dir / "estimate.json").string(); }
  std::string domain() const { return (dir / "domain.json").string(); }
  std::string s_d() const { return (dir / "s_d.csv").string(); }
  std::string pairs() const { return (dir / "pairs.json").string(); }
  std::filesystem::path plans(bool naive) const { return dir / (naive ? "plans_naive" : "plans_lmtd"); }
  std::string plan(bool naive, int i) const {
    char name[32];
    std::snprintf(name, sizeof name, "plan_%03d.json", i);
    return (plans(naive) / name).string();
  }
  std::string trace(bool naive, ExecMode mode, int i) const {
    char name[48];
    std::snprintf(name, sizeof name, "trace_%s_%03d.csv", mode == ExecMode::Closed ? "cl" : "ol", i);
    return (plans(naive) / name).string();
  }
  std::string execution(bool naive) const { return (plans(naive) / "execution.json").string(); }
  std::string table_txt() const { return (dir / "table.txt").string(); }
  std::string table_csv() const { return (dir / "table.csv").string(); }
  std::string evaluation() const { return (dir / "evaluation.json").string(); }
};

inline RunPaths run_paths(const RunConfig& c) {
  RunPaths p{c.out_dir};
  std::filesystem::create_directories(p.dir);
  return p;
}

namespace detail {

template <class F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, FailureKind::Stage, e.what());
  }
}

inline Dataset load_dataset(const std::string& path, DatasetRole role) {
  if (!std::filesystem::exists(path)) throw Error("missing input file " + path);
  return read_dataset_csv(path, role);
}

inline ControlAffineModel load_model_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw Error("missing model file " + path);
  return load_model(path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages

inline void stage_gen_data(const RunConfig& c) {
  detail::stage("gen-data", [&] {
    const RunPaths p = run_paths(c);
    const Dataset s = generate_dataset(c, c.n_train, kData, DatasetRole::Training);
    const Dataset psi = generate_dataset(c, c.n_lipschitz, kPsi, DatasetRole::Lipschitz);
    write_dataset_csv(p.train(), s, {provenance_line(provenance(c, derive_seed(c.seed, kData)))});
    write_dataset_csv(p.psi(), psi, {provenance_line(provenance(c, derive_seed(c.seed, kPsi)))});
  });
}

inline TrainResult stage_train(const RunConfig& c) {
  return detail::stage("train", [&] {
    const RunPaths p = run_paths(c);
    const Dataset s = detail::load_dataset(p.train(), DatasetRole::Training);
    Hyperparams hp = c.hp;
    hp.seed = derive_seed(c.seed, kTrain);
    TrainResult r = train_model(s, c.spec(), hp);
    const auto prov = provenance(c, hp.seed);
    save_model(p.model(), r.model, prov);
    write_json_file(p.train_report(), {{"mse", r.mse},
                                       {"best_epoch", r.best_epoch},
                                       {"reached_target", r.reached_target},
                                       {"history", r.history},
                                       {"hp", detail::hp_to_json(hp)},
                                       {"provenance", prov}});
    return r;
  });
}

struct FilteredData {
  ErrorStats stats;
  Dataset s_d;
  double e_t = 0.0;
};

inline FilteredData filter_training(const Dataset& s, const ControlAffineModel& m, double a) {
  FilteredData f;
  f.stats = error_stats(s, m);
  const auto keep = filter_indices(f.stats.errors, f.stats.mu, f.stats.sigma, a);
  f.s_d = s.subset(keep);
  for (std::size_t i : keep) f.e_t = std::max(f.e_t, f.stats.errors[i]);
  return f;
}

struct StageInputs {
  Dataset s;
  Dataset psi;
  ControlAffineModel model;
};

inline StageInputs load_stage_inputs(const RunConfig& c) {
  const RunPaths p = run_paths(c);
  StageInputs in;
  in.s = detail::load_dataset(p.train(), DatasetRole::Training);
  in.psi = c.lipschitz_source == LipschitzSource::Psi ? detail::load_dataset(p.psi(), DatasetRole::Lipschitz)
                                                      : Dataset(in.s.dim_x(), in.s.dim_u(), DatasetRole::Lipschitz);
  in.model = detail::load_model_file(p.model());
  return in;
}

inline DomainEstimators pipeline_estimators(const RunConfig& c, const StageInputs& in, const Dataset& s_d) {
  SlopeSampleConfig slope = c.slope;
  slope.seed = derive_seed(c.seed, kLipschitz);
  slope.workers = c.workers;
  return make_domain_estimators(in.model, s_d, dynamics_by_name(c.system), in.psi, c.lipschitz_source, slope, c.rho);
}

/// Error statistics, S_D and a single L̂_{f−g} estimate over D at the initial
/// radius.
inline nlohmann::json stage_estimate(const RunConfig& c) {
  return detail::stage("estimate", [&] {
    const RunPaths p = run_paths(c);
    const StageInputs in = load_stage_inputs(c);
    const FilteredData f = filter_training(in.s, in.model, c.a);
    const double r0 = std::max(f.stats.mu + c.a * f.stats.sigma, c.r_init);
    const LipschitzResult res = pipeline_estimators(c, in, f.s_d).model_error(r0, 0);
    nlohmann::json j{{"mu", f.stats.mu},
                     {"sigma", f.stats.sigma},
                     {"e_t", f.e_t},
                     {"a", c.a},
                     {"n_s", in.s.size()},
                     {"n_sd", f.s_d.size()},
                     {"r", r0},
                     {"ks_p", res.fit.ks_p},
                     {"ok", res.ok()},
                     {"provenance", provenance(c, derive_seed(c.seed, kLipschitz))}};
    if (res.ok()) {
      j["l_fg"] = estimate_report(*res.estimate);
      j["epsilon"] = compute_epsilon(res.estimate->l_hat, r0, f.e_t);
    } else {
      j["failure"] = res.failure;
    }
    write_json_file(p.estimate(), j);
    if (!res.ok()) throw StageError("estimate", FailureKind::Domain, res.failure);
    return j;
  });
}

inline TrustedDomain stage_select_domain(const RunConfig& c) {
  return detail::stage("select-domain", [&] {
    const RunPaths p = run_paths(c);
    const StageInputs in = load_stage_inputs(c);
    const FilteredData f = filter_training(in.s, in.model, c.a);
    DomainConfig dc;
    dc.a = c.a;
    dc.alpha_step = c.alpha_step;
    dc.r_init = c.r_init;
    dc.max_iters = c.domain_max_iters;
    dc.rho = c.rho;
    dc.seed = derive_seed(c.seed, kLipschitz);
    DomainResult res;
    try {
      res = select_r_and_domain(f.s_d, f.e_t, f.stats.mu, f.stats.sigma, dc, pipeline_estimators(c, in, f.s_d),
                                c.spec());
    } catch (const Error& e) {
      throw StageError("select-domain", FailureKind::Domain, e.what());
    }
    nlohmann::json log = nlohmann::json::array();
    for (const auto& it : res.log) log.push_back({{"r", it.r}, {"l_fg", it.l_fg}, {"epsilon", it.epsilon}});
    if (!res.ok()) {
      write_json_file(p.domain(), {{"ok", false}, {"failure", res.failure}, {"iterations", log}});
      throw StageError("select-domain", FailureKind::Domain, res.failure);
    }
    TrustedDomain td = std::move(*res.domain);
    td.lipschitz_source = to_string(c.lipschitz_source);
    const auto prov = provenance(c, dc.seed);
    nlohmann::json j = domain_summary(td);
    j["ok"] = true;
    j["iteration_log"] = log;
    j["provenance"] = prov;
    write_json_file(p.domain(), j);
    write_dataset_csv(p.s_d(), td.s_d, {provenance_line(prov)});
    return td;
  });
}

inline TrustedDomain load_domain(const RunConfig& c) {
  const RunPaths p = run_paths(c);
  if (!std::filesystem::exists(p.domain()) || !std::filesystem::exists(p.s_d()))
    throw Error("missing domain files in " + p.dir.string());
  const nlohmann::json j = read_json_file(p.domain());
  if (!j.value("ok", false)) throw Error("domain selection did not succeed: " + j.value("failure", std::string{}));
  return domain_from_summary(j, read_dataset_csv(p.s_d()));
}

// ---------------------------------------------------------------------------
// Start/goal pairs

struct StartGoal {
  StateVec start;
  StateVec goal;
};

/// Start and goal drawn from S_X: both clear of obstacles with ε inflation,
/// at least pair_min_distance apart, and the goal passes the hold check.
inline StartGoal sample_start_goal(const RunConfig& c, const ControlAffineModel& m, const TrustedDomain& td,
                                   Rng& rng) {
  const double inflation = td.epsilon + c.planner.bounding_radius;
  const int pos = c.spec().position_dims;
  const auto& sx = *td.state_index;
  for (int tries = 0; tries < 100000; ++tries) {
    const StateVec s = sx.point(rng.index(sx.size()));
    const StateVec g = sx.point(rng.index(sx.size()));
    if ((s - g).norm() < c.pair_min_distance) continue;
    if (in_collision(s, inflation, c.obstacles, pos) || in_collision(g, inflation, c.obstacles, pos)) continue;
    if (!goal_invariance_check(m, td, g).exists) continue;
    if (!goal_invariance_check(m, td, s).exists) continue;
    return {s, g};
  }
  throw Error("could not find a start/goal pair satisfying the hold check");
}

inline PlanProblem make_problem(const RunConfig& c, const StartGoal& sg) {
  PlanProblem p;
  p.system = c.spec();
  p.x_i = sg.start;
  p.x_g = sg.goal;
  p.lambda = c.lambda;
  p.obstacles = c.obstacles;
  return p;
}

/// Plans every pair in LMTD mode, replacing pairs that time out (up to
/// pair_attempts draws per slot); the resulting pairs are stored and reused by
/// the naive run.
inline std::vector<PlanResult> stage_plan(const RunConfig& c, bool naive) {
  return detail::stage(naive ? "plan --naive" : "plan", [&] {
    const RunPaths p = run_paths(c);
    const StageInputs in{Dataset(), Dataset(), detail::load_model_file(p.model())};
    const TrustedDomain td = load_domain(c);
    std::filesystem::create_directories(p.plans(naive));
    std::vector<PlanResult> results(static_cast<std::size_t>(c.n_pairs));
    std::vector<StartGoal> pairs(static_cast<std::size_t>(c.n_pairs));

    if (!naive) {
      parallel_for(
          static_cast<std::size_t>(c.n_pairs),
          [&](std::size_t i) {
            Rng pair_rng(derive_seed(c.seed, kPairs * 1000 + i));
            PlannerConfig pc = c.planner;
            pc.seed = derive_seed(c.seed, kPlan + i);
            for (int attempt = 0; attempt < c.pair_attempts; ++attempt) {
              pairs[i] = sample_start_goal(c, in.model, td, pair_rng);
              results[i] = plan(in.model, &td, make_problem(c, pairs[i]), pc);
              if (results[i].ok()) break;
            }
          },
          c.workers);
      nlohmann::json pj = nlohmann::json::array();
      for (const auto& sg : pairs) pj.push_back({{"start", vec_to_json(sg.start)}, {"goal", vec_to_json(sg.goal)}});
      write_json_file(p.pairs(), {{"pairs", pj}, {"provenance", provenance(c, derive_seed(c.seed, kPairs))}});
    } else {
      if (!std::filesystem::exists(p.pairs())) throw Error("missing " + p.pairs() + " (run plan without --naive first)");
      const auto pj = read_json_file(p.pairs()).at("pairs");
      if (pj.size() != pairs.size()) throw Error("pairs file does not match n_pairs");
      for (std::size_t i = 0; i < pairs.size(); ++i)
        pairs[i] = {vec_from_json(pj[i].at("start")), vec_from_json(pj[i].at("goal"))};
      parallel_for(
          pairs.size(),
          [&](std::size_t i) {
            PlannerConfig pc = c.naive_planner;
            pc.seed = derive_seed(c.seed, kPlan + i);
            results[i] = plan(in.model, &td, make_problem(c, pairs[i]), pc);
          },
          c.workers);
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
      PlannerConfig pc = naive ? c.naive_planner : c.planner;
      pc.seed = derive_seed(c.seed, kPlan + i);
      nlohmann::json j = plan_to_json(make_problem(c, pairs[i]), pc, results[i]);
      j["provenance"] = provenance(c, pc.seed);
      if (results[i].ok()) {
        const AuditReport audit = audit_trajectory(in.model, &td, make_problem(c, pairs[i]), pc, *results[i].trajectory);
        j["audit"] = audit.issues;
        if (!audit.ok()) throw Error("plan " + std::to_string(i) + " failed the audit: " + audit.issues.front());
      }
      write_json_file(p.plan(naive, static_cast<int>(i)), j);
    }
    return results;
  });
}

struct RunRecord {
  int index = 0;
  bool planned = false;
  RunStats closed;
  RunStats open;
  bool cl_failed = false;
  bool collided = false;
  double hold_max_goal_dist = 0.0;
  bool hold_failed = false;
  std::size_t steps = 0;
};

struct ExecutionReport {
  bool naive = false;
  double epsilon = 0.0;
  double lambda = 0.0;
  std::vector<RunRecord> runs;
  std::vector<StatsRow> rows;
};

inline nlohmann::json execution_to_json(const ExecutionReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& x : r.runs)
    runs.push_back({{"index", x.index},
                    {"planned", x.planned},
                    {"steps", x.steps},
                    {"cl_max_track_err", x.closed.max_track_err},
                    {"cl_goal_err", x.closed.goal_err},
                    {"ol_max_track_err", x.open.max_track_err},
                    {"ol_goal_err", x.open.goal_err},
                    {"cl_failed", x.cl_failed},
                    {"collided", x.collided},
                    {"hold_max_goal_dist", x.hold_max_goal_dist},
                    {"hold_failed", x.hold_failed}});
  return {{"naive", r.naive}, {"epsilon", r.epsilon}, {"lambda", r.lambda}, {"runs", runs}};
}

/// Closed- and open-loop execution of every stored plan under the true
/// dynamics, followed by the goal hold loop.
inline ExecutionReport stage_execute(const RunConfig& c, bool naive) {
  return detail::stage(naive ? "execute --naive" : "execute", [&] {
    const RunPaths p = run_paths(c);
    const ControlAffineModel m = detail::load_model_file(p.model());
    const TrustedDomain td = load_domain(c);
    const TrueDynamics f = dynamics_by_name(c.system);
    ExecutionReport rep;
    rep.naive = naive;
    rep.epsilon = td.epsilon;
    rep.lambda = c.lambda;
    rep.runs.resize(static_cast<std::size_t>(c.n_pairs));
    const PlannerConfig& pc = naive ? c.naive_planner : c.planner;
    SafetyCheck safety{c.obstacles, c.spec().position_dims, pc.bounding_radius};
    parallel_for(
        rep.runs.size(),
        [&](std::size_t i) {
          RunRecord& rec = rep.runs[i];
          rec.index = static_cast<int>(i);
          const auto path = p.plan(naive, static_cast<int>(i));
          if (!std::filesystem::exists(path)) throw Error("missing plan file " + path);
          const nlohmann::json j = read_json_file(path);
          if (!j.value("found", false)) return;
          rec.planned = true;
          const Trajectory t = trajectory_from_json(j);
          const StateVec goal = vec_from_json(j.at("problem").at("x_g"));
          rec.steps = t.steps();
          const ExecutionTrace cl = execute_closed_loop(f, m, t, &safety);
          const ExecutionTrace ol = execute_open_loop(f, t, &safety);
          const auto prov = provenance_line(provenance(c, derive_seed(c.seed, kPlan + i)));
          write_trace_csv(p.trace(naive, ExecMode::Closed, static_cast<int>(i)), cl, prov);
          write_trace_csv(p.trace(naive, ExecMode::Open, static_cast<int>(i)), ol, prov);
          rec.cl_failed = cl.failed;
          rec.collided = cl.collided;
          rec.closed = run_stats(cl, goal);
          rec.open = run_stats(ol, goal);
          if (!cl.failed) {
            const HoldTrace h = hold_at_goal(f, m, cl, goal, c.hold_steps);
            rec.hold_failed = h.failed;
            rec.hold_max_goal_dist = h.max_goal_dist;
          } else {
            rec.hold_failed = true;
          }
        },
        c.workers);
    std::vector<RunStats> cl, ol;
    for (const auto& r : rep.runs) {
      if (!r.planned) continue;
      cl.push_back(r.closed);
      ol.push_back(r.open);
    }
    const std::string method = naive ? "Naive kino. RRT" : "LMTD-RRT";
    if (!cl.empty()) {
      rep.rows.push_back(aggregate_stats(method, ExecMode::Closed, cl));
      rep.rows.push_back(aggregate_stats(method, ExecMode::Open, ol));
    }
    nlohmann::json j = execution_to_json(rep);
    j["provenance"] = provenance(c, c.seed);
    j["table"] = stats_table_text(rep.rows);
    write_json_file(p.execution(naive), j);
    return rep;
  });
}

struct Evaluation {
  ExecutionReport lmtd;
  ExecutionReport naive;
  TrustedDomain domain;
};

/// Plans and executes both planners on the same pairs and seeds and writes
/// the comparison table. Requires the model and domain stages.
inline Evaluation stage_evaluate(const RunConfig& c) {
  Evaluation ev;
  ev.domain = detail::stage("evaluate", [&] { return load_domain(c); });
  stage_plan(c, false);
  ev.lmtd = stage_execute(c, false);
  stage_plan(c, true);
  ev.naive = stage_execute(c, true);
  detail::stage("evaluate", [&] {
    const RunPaths p = run_paths(c);
    std::vector<StatsRow> rows = ev.lmtd.rows;
    rows.insert(rows.end(), ev.naive.rows.begin(), ev.naive.rows.end());
    std::ofstream txt(p.table_txt());
    txt << "# " << provenance_line(provenance(c, c.seed)) << '\n' << stats_table_text(rows);
    std::ofstream csv(p.table_csv());
    csv << "# " << provenance_line(provenance(c, c.seed)) << '\n' << stats_table_csv(rows);
    write_json_file(p.evaluation(), {{"lmtd", execution_to_json(ev.lmtd)},
                                     {"naive", execution_to_json(ev.naive)},
                                     {"domain", domain_summary(ev.domain)},
                                     {"provenance", provenance(c, c.seed)}});
  });
  return ev;
}

}  // namespace lmtd
