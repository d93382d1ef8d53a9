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

// SVG rendering of planned, closed-loop and open-loop trajectories.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lmtd/core.hpp"
#include "lmtd/pipeline.hpp"

namespace lmtd {

enum class TraceKind { Nominal, Closed, Open };

inline const char* trace_color(TraceKind k) {
  switch (k) {
    case TraceKind::Nominal: return "#1f3a93";
    case TraceKind::Closed: return "#2a8c3c";
    case TraceKind::Open: return "#c0392b";
  }
  return "#000000";
}

struct PlotTrace {
  TraceKind kind = TraceKind::Nominal;
  std::vector<Vec> points;
};

struct PlotScene {
  std::string title;
  std::vector<PlotTrace> traces;
  std::vector<Box> obstacles;
  std::vector<Vec> ball_centers;  // drawn with radius ball_radius
  double ball_radius = 0.0;
  std::vector<Vec> markers;  // start/goal points
};

/// A panel maps two coordinates of the scene to the page.
struct PlotView {
  int dim_x = 0;
  int dim_y = 1;
  std::string label_x = "x0";
  std::string label_y = "x1";
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s(buf);
  if (s == "-0.000") s = "0.000";
  return s;
}

struct Bounds {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -std::numeric_limits<double>::infinity();
  double y0 = std::numeric_limits<double>::infinity(), y1 = -std::numeric_limits<double>::infinity();

  void add(double x, double y) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  bool empty() const { return !(x0 <= x1); }
};

inline Bounds scene_bounds(const PlotScene& s, const PlotView& v) {
  Bounds b;
  auto take = [&](const Vec& p) {
    if (p.size() <= std::max(v.dim_x, v.dim_y)) throw Error("plot: point has too few coordinates for the view");
    b.add(p[v.dim_x], p[v.dim_y]);
  };
  for (const auto& t : s.traces)
    for (const auto& p : t.points) take(p);
  for (const auto& m : s.markers) take(m);
  for (const auto& c : s.ball_centers) {
    take(c);
    b.add(c[v.dim_x] - s.ball_radius, c[v.dim_y] - s.ball_radius);
    b.add(c[v.dim_x] + s.ball_radius, c[v.dim_y] + s.ball_radius);
  }
  for (const auto& o : s.obstacles) {
    if (o.dim() <= std::max(v.dim_x, v.dim_y)) throw Error("plot: obstacle has too few coordinates for the view");
    b.add(o.lo[v.dim_x], o.lo[v.dim_y]);
    b.add(o.hi[v.dim_x], o.hi[v.dim_y]);
  }
  if (b.empty()) return Bounds{0.0, 1.0, 0.0, 1.0};
  const double px = std::max(0.05 * (b.x1 - b.x0), 1e-3), py = std::max(0.05 * (b.y1 - b.y0), 1e-3);
  return Bounds{b.x0 - px, b.x1 + px, b.y0 - py, b.y1 + py};
}

}  // namespace detail

/// Renders one panel per view, side by side. Output depends only on the
/// scene, so identical scenes give identical bytes.
inline std::string render_svg(const PlotScene& scene, const std::vector<PlotView>& views, int panel_size = 480) {
  if (views.empty()) throw Error("render_svg: no views");
  const int margin = 50;
  const int pw = panel_size, ph = panel_size;
  const int width = static_cast<int>(views.size()) * (pw + 2 * margin);
  const int height = ph + 2 * margin + 20;
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
  if (!scene.title.empty())
    o << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << scene.title << "</text>\n";

  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    const PlotView& v = views[vi];
    const detail::Bounds b = detail::scene_bounds(scene, v);
    const double ox = static_cast<double>(vi) * (pw + 2 * margin) + margin, oy = margin + 20;
    const double sx = pw / (b.x1 - b.x0), sy = ph / (b.y1 - b.y0);
    auto X = [&](double x) { return detail::fmt(ox + (x - b.x0) * sx); };
    auto Y = [&](double y) { return detail::fmt(oy + ph - (y - b.y0) * sy); };

    o << "<g id=\"panel" << vi << "\">\n";
    o << "<rect x=\"" << detail::fmt(ox) << "\" y=\"" << detail::fmt(oy) << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double xv = b.x0 + (b.x1 - b.x0) * t / 4.0, yv = b.y0 + (b.y1 - b.y0) * t / 4.0;
      o << "<text x=\"" << X(xv) << "\" y=\"" << detail::fmt(oy + ph + 14)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << detail::fmt(xv) << "</text>\n";
      o << "<text x=\"" << detail::fmt(ox - 4) << "\" y=\"" << Y(yv)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << detail::fmt(yv) << "</text>\n";
    }
    o << "<text x=\"" << detail::fmt(ox + pw / 2.0) << "\" y=\"" << detail::fmt(oy + ph + 30)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << v.label_x << "</text>\n";
    o << "<text x=\"" << detail::fmt(ox - 36) << "\" y=\"" << detail::fmt(oy + ph / 2.0)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 "
      << detail::fmt(ox - 36) << ' ' << detail::fmt(oy + ph / 2.0) << ")\">" << v.label_y << "</text>\n";

    if (!scene.ball_centers.empty()) {
      o << "<g fill=\"#5dade2\" fill-opacity=\"0.08\" stroke=\"none\">\n";
      for (const auto& c : scene.ball_centers)
        o << "<ellipse cx=\"" << X(c[v.dim_x]) << "\" cy=\"" << Y(c[v.dim_y]) << "\" rx=\""
          << detail::fmt(scene.ball_radius * sx) << "\" ry=\"" << detail::fmt(scene.ball_radius * sy) << "\"/>\n";
      o << "</g>\n";
    }
    for (const auto& ob : scene.obstacles)
      o << "<rect x=\"" << X(ob.lo[v.dim_x]) << "\" y=\"" << Y(ob.hi[v.dim_y]) << "\" width=\""
        << detail::fmt((ob.hi[v.dim_x] - ob.lo[v.dim_x]) * sx) << "\" height=\""
        << detail::fmt((ob.hi[v.dim_y] - ob.lo[v.dim_y]) * sy)
        << "\" fill=\"#7f8c8d\" fill-opacity=\"0.6\" stroke=\"#2c3e50\"/>\n";
    for (const auto& t : scene.traces) {
      if (t.points.empty()) continue;
      o << "<polyline fill=\"none\" stroke=\"" << trace_color(t.kind) << "\" stroke-width=\"1.5\"";
      if (t.kind == TraceKind::Nominal) o << " stroke-dasharray=\"4 2\"";
      o << " points=\"";
      for (std::size_t k = 0; k < t.points.size(); ++k) {
        if (k) o << ' ';
        o << X(t.points[k][v.dim_x]) << ',' << Y(t.points[k][v.dim_y]);
      }
      o << "\"/>\n";
    }
    for (const auto& m : scene.markers)
      o << "<circle cx=\"" << X(m[v.dim_x]) << "\" cy=\"" << Y(m[v.dim_y]) << "\" r=\"3\" fill=\"#000000\"/>\n";
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline std::vector<PlotView> default_views(const SystemSpec& spec) {
  if (spec.position_dims >= 3) return {{0, 1, "x", "y"}, {0, 2, "x", "z"}, {1, 2, "y", "z"}};
  return {{0, 1, "x0", "x1"}};
}

/// Nominal and executed states from a trace file written by write_trace_csv.
inline std::pair<std::vector<Vec>, std::vector<Vec>> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::string line;
  std::vector<std::string> header;
  int nx = -1;
  std::vector<Vec> nominal, executed;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (nx < 0) {
      header = cells;
      nx = static_cast<int>(std::count_if(header.begin(), header.end(),
                                          [](const std::string& h) { return h.size() > 1 && h[0] == 'x' && h[1] != 't'; }));
      if (nx == 0 || header.empty() || header.front() != "step") throw Error("malformed trace header in " + path);
      continue;
    }
    if (cells.size() < static_cast<std::size_t>(1 + 2 * nx)) throw Error("malformed trace row in " + path);
    Vec a(nx), b(nx);
    try {
      for (int i = 0; i < nx; ++i) {
        a[i] = std::stod(cells[static_cast<std::size_t>(1 + i)]);
        b[i] = std::stod(cells[static_cast<std::size_t>(1 + nx + i)]);
      }
    } catch (const std::exception&) {
      throw Error("malformed number in " + path);
    }
    nominal.push_back(a);
    executed.push_back(b);
  }
  if (nx < 0) throw Error("empty trace file " + path);
  return {nominal, executed};
}

/// Writes plot_lmtd.svg and plot_naive.svg (whichever plan sets exist) into
/// the run directory; returns the written paths.
inline std::vector<std::string> stage_plot(const RunConfig& c) {
  return detail::stage("plot", [&] {
    const RunPaths p = run_paths(c);
    const SystemSpec spec = c.spec();
    std::vector<std::string> written;
    for (bool naive : {false, true}) {
      if (!std::filesystem::exists(p.plans(naive))) continue;
      PlotScene scene;
      scene.title = naive ? "Naive kino. RRT" : "LMTD-RRT";
      for (const auto& ob : c.obstacles) scene.obstacles.push_back(ob);
      if (spec.position_dims < 3 && std::filesystem::exists(p.domain())) {
        const nlohmann::json dj = read_json_file(p.domain());
        if (dj.value("ok", false) && std::filesystem::exists(p.s_d())) {
          const Dataset sd = read_dataset_csv(p.s_d());
          scene.ball_radius = dj.at("r").get<double>();
          for (std::size_t i = 0; i < sd.size(); ++i) scene.ball_centers.push_back(sd.x.col(static_cast<Eigen::Index>(i)));
        }
      }
      for (int i = 0; i < c.n_pairs; ++i) {
        const std::string plan_path = p.plan(naive, i);
        if (!std::filesystem::exists(plan_path)) continue;
        const nlohmann::json j = read_json_file(plan_path);
        scene.markers.push_back(vec_from_json(j.at("problem").at("x_i")));
        scene.markers.push_back(vec_from_json(j.at("problem").at("x_g")));
        if (!j.value("found", false)) continue;
        const Trajectory t = trajectory_from_json(j);
        scene.traces.push_back({TraceKind::Nominal, {t.states.begin(), t.states.end()}});
        for (ExecMode mode : {ExecMode::Open, ExecMode::Closed}) {
          const std::string tp = p.trace(naive, mode, i);
          if (!std::filesystem::exists(tp)) continue;
          scene.traces.push_back({mode == ExecMode::Closed ? TraceKind::Closed : TraceKind::Open, read_trace_csv(tp).second});
        }
      }
      const std::string out = (p.dir / (naive ? "plot_naive.svg" : "plot_lmtd.svg")).string();
      std::ofstream f(out);
      if (!f) throw Error("cannot write " + out);
      f << render_svg(scene, default_views(spec));
      if (!f) throw Error("write failed for " + out);
      written.push_back(out);
    }
    if (written.empty()) throw Error("no plan directories in " + p.dir.string());
    return written;
  });
}

}  // namespace lmtd
