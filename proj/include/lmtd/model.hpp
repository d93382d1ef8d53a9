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

// Learned control-affine dynamics g(x,u) = g0(x) + g1(x) u, where g0 and g1 are
// small feed-forward networks and g1's output is reshaped row-major into a
// dim(X) x dim(U) matrix.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmtd/core.hpp"
#include "lmtd/dynamics.hpp"

namespace lmtd {

enum class Activation { Tanh, Relu };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw Error("unknown activation '" + s + "'");
}

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

/// Fully connected network; the activation applies to every hidden layer and
/// the output layer is linear.
class Mlp {
 public:
  Mlp() = default;

  /// Zero-initialized network with the given layer widths (input first).
  Mlp(const std::vector<int>& sizes, Activation activation) : activation_(activation) {
    if (sizes.size() < 2) throw Error("Mlp: need at least input and output sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      if (sizes[i] <= 0 || sizes[i + 1] <= 0) throw Error("Mlp: nonpositive layer size");
      layers_.push_back({Mat::Zero(sizes[i + 1], sizes[i]), Vec::Zero(sizes[i + 1])});
    }
  }

  /// Weights and biases uniform in ±1/sqrt(fan_in).
  static Mlp random(const std::vector<int>& sizes, Activation activation, Rng& rng) {
    Mlp net(sizes, activation);
    for (auto& layer : net.layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = rng.uniform(-bound, bound);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = rng.uniform(-bound, bound);
    }
    return net;
  }

  static Mlp from_layers(std::vector<DenseLayer> layers, Activation activation) {
    if (layers.empty()) throw Error("Mlp: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.weight.rows()) throw Error("Mlp: bias/weight shape mismatch");
      if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows())
        throw Error("Mlp: consecutive layer dimensions do not chain");
      if (!l.weight.allFinite() || !l.bias.allFinite()) throw Error("Mlp: non-finite parameter");
    }
    Mlp net;
    net.layers_ = std::move(layers);
    net.activation_ = activation;
    return net;
  }

  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }
  Activation activation() const { return activation_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::vector<int> sizes() const {
    std::vector<int> s;
    if (layers_.empty()) return s;
    s.push_back(input_dim());
    for (const auto& l : layers_) s.push_back(static_cast<int>(l.weight.rows()));
    return s;
  }

  Vec forward(const Vec& x) const {
    if (x.size() != input_dim()) throw Error("Mlp: input dimension mismatch");
    Vec h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Vec z = layers_[i].weight * h + layers_[i].bias;
      h = (i + 1 < layers_.size()) ? activate(z) : z;
    }
    return h;
  }

  /// Column-wise forward pass over a batch.
  Mat forward_batch(const Mat& x) const {
    Mat h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Mat z = layers_[i].weight * h;
      z.colwise() += layers_[i].bias;
      h = (i + 1 < layers_.size()) ? activate(z) : z;
    }
    return h;
  }

  template <typename Derived>
  Derived activate(const Eigen::MatrixBase<Derived>& z) const {
    if (activation_ == Activation::Tanh) return z.array().tanh().matrix();
    return z.array().max(0.0).matrix();
  }

 private:
  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::Tanh;
};

class ControlAffineModel {
 public:
  ControlAffineModel() = default;

  ControlAffineModel(SystemSpec system, std::optional<Mlp> g0, Mlp g1)
      : system_(std::move(system)), g0_(std::move(g0)), g1_(std::move(g1)) {
    if (g0_ && (g0_->input_dim() != system_.dim_x || g0_->output_dim() != system_.dim_x))
      throw Error("ControlAffineModel: g0 must map dim(X) -> dim(X)");
    if (g1_.input_dim() != system_.dim_x || g1_.output_dim() != system_.dim_x * system_.dim_u)
      throw Error("ControlAffineModel: g1 must map dim(X) -> dim(X)*dim(U)");
  }

  const SystemSpec& system() const { return system_; }
  bool g0_is_identity() const { return !g0_.has_value(); }
  const std::optional<Mlp>& g0_net() const { return g0_; }
  const Mlp& g1_net() const { return g1_; }

  StateVec eval_g0(const StateVec& x) const {
    check_x(x);
    return g0_ ? g0_->forward(x) : x;
  }

  Mat eval_g1(const StateVec& x) const {
    check_x(x);
    const Vec flat = g1_.forward(x);
    // Row-major reshape: entry (a, c) is flat[a * dim_u + c].
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.data(), system_.dim_x, system_.dim_u);
  }

  StateVec eval(const StateVec& x, const ControlVec& u) const {
    if (u.size() != system_.dim_u) throw Error("eval_model: control dimension mismatch");
    return eval_g0(x) + eval_g1(x) * u;
  }

 private:
  void check_x(const StateVec& x) const {
    if (x.size() != system_.dim_x) throw Error("eval_model: state dimension mismatch");
  }

  SystemSpec system_;
  std::optional<Mlp> g0_;
  Mlp g1_;
};

// ---------------------------------------------------------------------------
// Datasets

enum class DatasetRole { Training, Lipschitz };

/// Samples (x, u, y = f(x, u)) stored one per column.
struct Dataset {
  Mat x;
  Mat u;
  Mat y;
  DatasetRole role = DatasetRole::Training;

  Dataset() = default;
  Dataset(int dim_x, int dim_u, DatasetRole r = DatasetRole::Training)
      : x(dim_x, 0), u(dim_u, 0), y(dim_x, 0), role(r) {}

  std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
  bool empty() const { return size() == 0; }
  int dim_x() const { return static_cast<int>(x.rows()); }
  int dim_u() const { return static_cast<int>(u.rows()); }

  void validate() const {
    if (u.cols() != x.cols() || y.cols() != x.cols()) throw Error("Dataset: column count mismatch");
    if (y.rows() != x.rows()) throw Error("Dataset: y must have dim(X) rows");
  }

  /// Concatenated (x, u) pair of sample i.
  Vec pair(std::size_t i) const {
    const auto c = static_cast<Eigen::Index>(i);
    return concat(x.col(c), u.col(c));
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out(dim_x(), dim_u(), role);
    out.x.resize(dim_x(), static_cast<Eigen::Index>(idx.size()));
    out.u.resize(dim_u(), static_cast<Eigen::Index>(idx.size()));
    out.y.resize(dim_x(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(idx[k]);
      const auto o = static_cast<Eigen::Index>(k);
      out.x.col(o) = x.col(c);
      out.u.col(o) = u.col(c);
      out.y.col(o) = y.col(c);
    }
    return out;
  }
};

/// Writes the dataset CSV. Lines starting with '#' are provenance comments.
inline void write_dataset_csv(const std::string& path, const Dataset& ds,
                              const std::vector<std::string>& comments = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset file '" + path + "'");
  for (const auto& c : comments) out << "# " << c << '\n';
  std::string header;
  for (int i = 0; i < ds.dim_x(); ++i) header += "x" + std::to_string(i) + ",";
  for (int i = 0; i < ds.dim_u(); ++i) header += "u" + std::to_string(i) + ",";
  for (int i = 0; i < ds.dim_x(); ++i) header += "y" + std::to_string(i) + (i + 1 < ds.dim_x() ? "," : "");
  out << header << '\n';
  char buf[32];
  for (std::size_t s = 0; s < ds.size(); ++s) {
    const auto c = static_cast<Eigen::Index>(s);
    std::string row;
    auto put = [&](double v, bool last) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      row += buf;
      if (!last) row += ',';
    };
    for (int i = 0; i < ds.dim_x(); ++i) put(ds.x(i, c), false);
    for (int i = 0; i < ds.dim_u(); ++i) put(ds.u(i, c), false);
    for (int i = 0; i < ds.dim_x(); ++i) put(ds.y(i, c), i + 1 == ds.dim_x());
    out << row << '\n';
  }
  if (!out) throw Error("failed writing dataset file '" + path + "'");
}

inline Dataset read_dataset_csv(const std::string& path, DatasetRole role = DatasetRole::Training) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file '" + path + "'");
  std::string line;
  int nx = -1, nu = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (nx < 0) {
      int cx = 0, cu = 0, cy = 0;
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, ',')) {
        if (col.empty()) throw Error("dataset header: empty column name");
        if (col[0] == 'x') ++cx;
        else if (col[0] == 'u') ++cu;
        else if (col[0] == 'y') ++cy;
        else throw Error("dataset header: unexpected column '" + col + "'");
      }
      if (cx == 0 || cx != cy || cu == 0) throw Error("dataset header: inconsistent x/u/y columns");
      nx = cx;
      nu = cu;
      continue;
    }
    std::vector<double> vals;
    const char* p = line.c_str();
    while (*p) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) throw Error("dataset '" + path + "': malformed number");
      vals.push_back(v);
      p = end;
      if (*p == ',') ++p;
      else if (*p != '\0' && *p != '\r') throw Error("dataset '" + path + "': malformed row");
      else break;
    }
    if (static_cast<int>(vals.size()) != 2 * nx + nu)
      throw Error("dataset '" + path + "': row has wrong column count");
    rows.push_back(std::move(vals));
  }
  if (nx < 0) throw Error("dataset '" + path + "': missing header");
  Dataset ds(nx, nu, role);
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.x.resize(nx, n);
  ds.u.resize(nu, n);
  ds.y.resize(nx, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& r = rows[static_cast<std::size_t>(c)];
    for (int i = 0; i < nx; ++i) ds.x(i, c) = r[static_cast<std::size_t>(i)];
    for (int i = 0; i < nu; ++i) ds.u(i, c) = r[static_cast<std::size_t>(nx + i)];
    for (int i = 0; i < nx; ++i) ds.y(i, c) = r[static_cast<std::size_t>(nx + nu + i)];
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { Sgd, Adam };

struct Hyperparams {
  int g0_hidden = 128;
  int g1_hidden = 512;
  Activation activation = Activation::Tanh;
  bool g0_identity = false;
  Optimizer optimizer = Optimizer::Sgd;
  double learning_rate = 1e-2;
  double lr_decay = 1.0;  // multiplicative, applied after each epoch
  int epochs = 200;
  int batch_size = 32;
  double target_mse = 1e-4;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ControlAffineModel model;
  double mse = 0.0;          // mean over samples of ‖g(x,u) − y‖², best epoch
  int best_epoch = 0;
  bool reached_target = false;
  std::vector<double> history;  // full-dataset MSE after each epoch
};

namespace detail {

// Trainable copy of an Mlp with optimizer state.
struct TrainableNet {
  Mlp net;
  std::vector<Mat> gw, mw, vw;
  std::vector<Vec> gb, mb, vb;
  std::vector<Mat> acts;  // acts[0] is the input; acts[i+1] is the output of layer i

  explicit TrainableNet(Mlp n) : net(std::move(n)) {
    for (const auto& l : net.layers()) {
      gw.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
      mw.push_back(gw.back());
      vw.push_back(gw.back());
      gb.push_back(Vec::Zero(l.bias.size()));
      mb.push_back(gb.back());
      vb.push_back(gb.back());
    }
  }

  const Mat& forward(const Mat& x) {
    const auto& layers = net.layers();
    acts.resize(layers.size() + 1);
    acts[0] = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      Mat z = layers[i].weight * acts[i];
      z.colwise() += layers[i].bias;
      acts[i + 1] = (i + 1 < layers.size()) ? net.activate(z) : z;
    }
    return acts.back();
  }

  void backward(Mat grad_out) {
    auto& layers = net.layers();
    for (std::size_t ii = layers.size(); ii-- > 0;) {
      gw[ii].noalias() = grad_out * acts[ii].transpose();
      gb[ii] = grad_out.rowwise().sum();
      if (ii == 0) break;
      Mat g = layers[ii].weight.transpose() * grad_out;
      if (net.activation() == Activation::Tanh) {
        g.array() *= 1.0 - acts[ii].array().square();
      } else {
        g.array() *= (acts[ii].array() > 0.0).cast<double>();
      }
      grad_out = std::move(g);
    }
  }

  void step(Optimizer opt, double lr, long t) {
    auto& layers = net.layers();
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (opt == Optimizer::Sgd) {
        layers[i].weight -= lr * gw[i];
        layers[i].bias -= lr * gb[i];
        continue;
      }
      mw[i] = b1 * mw[i] + (1 - b1) * gw[i];
      vw[i] = b2 * vw[i] + (1 - b2) * gw[i].cwiseProduct(gw[i]);
      mb[i] = b1 * mb[i] + (1 - b1) * gb[i];
      vb[i] = b2 * vb[i] + (1 - b2) * gb[i].cwiseProduct(gb[i]);
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
      layers[i].weight.array() -= lr * (mw[i].array() / c1) / ((vw[i].array() / c2).sqrt() + eps);
      layers[i].bias.array() -= lr * (mb[i].array() / c1) / ((vb[i].array() / c2).sqrt() + eps);
    }
  }
};

// Folds x_n = (x − shift) / scale into the first layer and
// y = out_scale ⊙ y_n + out_shift into the last layer.
inline Mlp fold_normalization(Mlp net, const Vec& in_shift, const Vec& in_scale, const Vec& out_shift,
                              const Vec& out_scale) {
  auto& first = net.layers().front();
  const Mat w = first.weight * in_scale.cwiseInverse().asDiagonal();
  first.bias -= w * in_shift;
  first.weight = w;
  auto& last = net.layers().back();
  last.weight = out_scale.asDiagonal() * last.weight;
  last.bias = out_scale.cwiseProduct(last.bias) + out_shift;
  return net;
}

inline double batch_mse(const Mat& g0x, const Mat& g1flat, const Mat& u, const Mat& y, int nx, int nu) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    for (int a = 0; a < nx; ++a) {
      double pred = g0x(a, c);
      for (int k = 0; k < nu; ++k) pred += g1flat(a * nu + k, c) * u(k, c);
      const double r = pred - y(a, c);
      total += r * r;
    }
  }
  return y.cols() > 0 ? total / static_cast<double>(y.cols()) : 0.0;
}

}  // namespace detail

/// Mean over samples of the squared one-step error ‖g(x̄,ū) − ȳ‖².
inline double model_mse(const ControlAffineModel& m, const Dataset& ds) {
  if (ds.empty()) return 0.0;
  const int nx = m.system().dim_x, nu = m.system().dim_u;
  const Mat g0x = m.g0_is_identity() ? ds.x : m.g0_net()->forward_batch(ds.x);
  return detail::batch_mse(g0x, m.g1_net().forward_batch(ds.x), ds.u, ds.y, nx, nu);
}

/// Minimizes the mean squared one-step error over `data` with mini-batch
/// gradient steps. Inputs (and g0 outputs) are standardized during training and
/// the affine maps are folded back into the weights, so the returned networks
/// act on raw states. Deterministic for fixed (data, hp).
inline TrainResult train_model(const Dataset& data, const SystemSpec& system, const Hyperparams& hp) {
  data.validate();
  if (data.empty()) throw Error("train_model: empty dataset");
  if (data.dim_x() != system.dim_x || data.dim_u() != system.dim_u)
    throw Error("train_model: dataset dimensions do not match system");
  if (hp.epochs <= 0 || hp.batch_size <= 0 || !(hp.learning_rate > 0.0))
    throw Error("train_model: invalid hyperparameters");

  const int nx = system.dim_x, nu = system.dim_u;
  const auto n = static_cast<Eigen::Index>(data.size());
  Rng rng(hp.seed);

  const Vec x_mean = data.x.rowwise().mean();
  Vec x_std = ((data.x.colwise() - x_mean).array().square().rowwise().mean()).sqrt().matrix();
  x_std = x_std.cwiseMax(1e-8);
  const Mat xn = (data.x.colwise() - x_mean).array().colwise() / x_std.array();

  Vec y_mean = Vec::Zero(nx), y_std = Vec::Ones(nx);
  if (!hp.g0_identity) {
    y_mean = data.y.rowwise().mean();
    y_std = ((data.y.colwise() - y_mean).array().square().rowwise().mean()).sqrt().matrix();
    y_std = y_std.cwiseMax(1e-8);
  }

  std::optional<detail::TrainableNet> g0;
  if (!hp.g0_identity) g0.emplace(Mlp::random({nx, hp.g0_hidden, nx}, hp.activation, rng));
  detail::TrainableNet g1(Mlp::random({nx, hp.g1_hidden, nx * nu}, hp.activation, rng));

  auto snapshot = [&]() {
    std::optional<Mlp> g0_raw;
    if (g0) g0_raw = detail::fold_normalization(g0->net, x_mean, x_std, y_mean, y_std);
    Mlp g1_raw = detail::fold_normalization(g1.net, x_mean, x_std, Vec::Zero(nx * nu), Vec::Ones(nx * nu));
    return ControlAffineModel(system, std::move(g0_raw), std::move(g1_raw));
  };

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  double lr = hp.learning_rate;
  long t = 0;
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    for (Eigen::Index start = 0; start < n; start += hp.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(hp.batch_size, n - start);
      Mat bx(nx, b), bu(nu, b), by(nx, b), braw(nx, b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const Eigen::Index c = order[static_cast<std::size_t>(start + k)];
        bx.col(k) = xn.col(c);
        braw.col(k) = data.x.col(c);
        bu.col(k) = data.u.col(c);
        by.col(k) = data.y.col(c);
      }
      Mat pred0 = braw;
      if (g0) pred0 = (y_std.asDiagonal() * g0->forward(bx)).colwise() + y_mean;
      const Mat& o1 = g1.forward(bx);

      Mat resid = pred0 - by;
      for (Eigen::Index k = 0; k < b; ++k)
        for (int a = 0; a < nx; ++a)
          for (int c = 0; c < nu; ++c) resid(a, k) += o1(a * nu + c, k) * bu(c, k);

      const double scale = 2.0 / static_cast<double>(b);
      Mat d1(nx * nu, b);
      for (Eigen::Index k = 0; k < b; ++k)
        for (int a = 0; a < nx; ++a)
          for (int c = 0; c < nu; ++c) d1(a * nu + c, k) = scale * resid(a, k) * bu(c, k);

      ++t;
      if (g0) {
        g0->backward(scale * (y_std.asDiagonal() * resid));
        g0->step(hp.optimizer, lr, t);
      }
      g1.backward(std::move(d1));
      g1.step(hp.optimizer, lr, t);
    }
    lr *= hp.lr_decay;

    const Mat g0x = g0 ? Mat((y_std.asDiagonal() * g0->net.forward_batch(xn)).colwise() + y_mean) : data.x;
    const double mse = detail::batch_mse(g0x, g1.net.forward_batch(xn), data.u, data.y, nx, nu);
    if (!std::isfinite(mse)) throw Error("train_model: loss diverged at epoch " + std::to_string(epoch));
    result.history.push_back(mse);
    if (mse < best) {
      best = mse;
      result.best_epoch = epoch;
      result.model = snapshot();
    }
  }
  result.mse = best;
  result.reached_target = best <= hp.target_mse;
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json layers_to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) w.push_back(l.weight(i, j));
    nlohmann::json b = nlohmann::json::array();
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) b.push_back(l.bias[i]);
    layers.push_back({{"in", l.weight.cols()}, {"out", l.weight.rows()}, {"weight", w}, {"bias", b}});
  }
  return layers;
}

inline Mlp layers_from_json(const nlohmann::json& j, Activation act) {
  std::vector<DenseLayer> layers;
  for (const auto& lj : j.at("layers")) {
    const auto in = lj.at("in").get<Eigen::Index>();
    const auto out = lj.at("out").get<Eigen::Index>();
    const auto& w = lj.at("weight");
    const auto& b = lj.at("bias");
    if (in <= 0 || out <= 0) throw Error("model file: nonpositive layer shape");
    if (static_cast<Eigen::Index>(w.size()) != in * out || static_cast<Eigen::Index>(b.size()) != out)
      throw Error("model file: layer parameter count does not match shape");
    DenseLayer l{Mat(out, in), Vec(out)};
    for (Eigen::Index i = 0; i < out; ++i)
      for (Eigen::Index k = 0; k < in; ++k) l.weight(i, k) = w[static_cast<std::size_t>(i * in + k)].get<double>();
    for (Eigen::Index i = 0; i < out; ++i) l.bias[i] = b[static_cast<std::size_t>(i)].get<double>();
    layers.push_back(std::move(l));
  }
  return Mlp::from_layers(std::move(layers), act);
}

}  // namespace detail

inline nlohmann::json model_to_json(const ControlAffineModel& m) {
  nlohmann::json j;
  j["version"] = kModelFormatVersion;
  j["system"] = m.system().name;
  j["activation"] = to_string(m.g1_net().activation());
  if (m.g0_is_identity()) {
    j["g0"] = {{"identity", true}};
  } else {
    j["g0"] = {{"identity", false}, {"layers", detail::layers_to_json(*m.g0_net())}};
  }
  j["g1"] = {{"layers", detail::layers_to_json(m.g1_net())}};
  return j;
}

inline ControlAffineModel model_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw Error("model file: format version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kModelFormatVersion) + ")");
    const SystemSpec sys = system_by_name(j.at("system").get<std::string>());
    const Activation act = activation_from_string(j.at("activation").get<std::string>());
    std::optional<Mlp> g0;
    if (!j.at("g0").value("identity", false)) g0 = detail::layers_from_json(j.at("g0"), act);
    return ControlAffineModel(sys, std::move(g0), detail::layers_from_json(j.at("g1"), act));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model file: malformed document: ") + e.what());
  }
}

inline void save_model(const std::string& path, const ControlAffineModel& m, const nlohmann::json& provenance = {}) {
  nlohmann::json j = model_to_json(m);
  if (!provenance.is_null()) j["provenance"] = provenance;
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file '" + path + "'");
  out << j.dump(1) << '\n';
  if (!out) throw Error("failed writing model file '" + path + "'");
}

inline ControlAffineModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("model file '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

}  // namespace lmtd
