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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

#include "lmtd/core.hpp"

namespace lmtd {

/// Exact Euclidean nearest-neighbor index over a fixed point set (one point
/// per column). Ties in distance resolve to the smallest point index, so the
/// tree and the brute-force scan agree exactly.
class NnIndex {
 public:
  struct Hit {
    std::size_t index = 0;
    double distance = std::numeric_limits<double>::infinity();
  };

  static constexpr std::size_t kBruteForceBelow = 64;
  static constexpr std::size_t kLeafSize = 12;

  NnIndex() = default;

  explicit NnIndex(Mat points) : points_(std::move(points)) {
    if (!points_.allFinite()) throw Error("NnIndex: non-finite point");
    perm_.resize(size());
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    if (size() >= kBruteForceBelow) {
      nodes_.reserve(2 * size() / kLeafSize + 1);
      build(0, size());
    }
  }

  std::size_t size() const { return static_cast<std::size_t>(points_.cols()); }
  int dim() const { return static_cast<int>(points_.rows()); }
  bool empty() const { return size() == 0; }
  const Mat& points() const { return points_; }
  Vec point(std::size_t i) const { return points_.col(static_cast<Eigen::Index>(i)); }

  Hit nearest(const Vec& q) const {
    check_query(q);
    if (empty()) throw Error("NnIndex::nearest on empty index");
    if (nodes_.empty()) return nearest_brute(q);
    Best best;
    search_nearest(0, q, best);
    return {best.index, std::sqrt(best.d2)};
  }

  Hit nearest_brute(const Vec& q) const {
    check_query(q);
    if (empty()) throw Error("NnIndex::nearest on empty index");
    Best best;
    for (std::size_t i = 0; i < size(); ++i) offer(best, i, dist2(q, i));
    return {best.index, std::sqrt(best.d2)};
  }

  /// k nearest points sorted by (distance, index).
  std::vector<Hit> k_nearest(const Vec& q, std::size_t k) const {
    check_query(q);
    k = std::min(k, size());
    std::vector<Hit> out;
    if (k == 0) return out;
    KHeap heap;
    if (nodes_.empty()) {
      for (std::size_t i = 0; i < size(); ++i) offer_k(heap, k, i, dist2(q, i));
    } else {
      search_k(0, q, k, heap);
    }
    out.reserve(heap.size());
    while (!heap.empty()) {
      out.push_back({heap.top().second, std::sqrt(heap.top().first)});
      heap.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Indices of all points within the closed ball ‖p − q‖ ≤ radius, ascending.
  std::vector<std::size_t> within(const Vec& q, double radius) const {
    check_query(q);
    std::vector<std::size_t> out;
    const double r2 = radius * radius;
    if (nodes_.empty()) {
      for (std::size_t i = 0; i < size(); ++i)
        if (dist2(q, i) <= r2) out.push_back(i);
    } else {
      search_within(0, q, r2, [&](std::size_t i) { out.push_back(i); });
      std::sort(out.begin(), out.end());
    }
    return out;
  }

  std::size_t count_within(const Vec& q, double radius) const {
    check_query(q);
    std::size_t n = 0;
    const double r2 = radius * radius;
    if (nodes_.empty()) {
      for (std::size_t i = 0; i < size(); ++i)
        if (dist2(q, i) <= r2) ++n;
    } else {
      search_within(0, q, r2, [&](std::size_t) { ++n; });
    }
    return n;
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;
    int split_dim = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };
  struct Best {
    std::size_t index = std::numeric_limits<std::size_t>::max();
    double d2 = std::numeric_limits<double>::infinity();
  };
  using KEntry = std::pair<double, std::size_t>;
  // Max-heap on (d2, index): the top is the current worst kept candidate.
  using KHeap = std::priority_queue<KEntry>;

  void check_query(const Vec& q) const {
    if (q.size() != points_.rows()) throw Error("NnIndex: query dimension mismatch");
  }

  double dist2(const Vec& q, std::size_t i) const {
    const auto* p = points_.data() + static_cast<std::ptrdiff_t>(i) * points_.rows();
    double s = 0.0;
    for (Eigen::Index d = 0; d < points_.rows(); ++d) {
      const double t = q[d] - p[d];
      s += t * t;
    }
    return s;
  }

  static void offer(Best& best, std::size_t i, double d2) {
    if (d2 < best.d2 || (d2 == best.d2 && i < best.index)) {
      best.d2 = d2;
      best.index = i;
    }
  }

  static void offer_k(KHeap& heap, std::size_t k, std::size_t i, double d2) {
    if (heap.size() < k) {
      heap.emplace(d2, i);
    } else if (KEntry{d2, i} < heap.top()) {
      heap.pop();
      heap.emplace(d2, i);
    }
  }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    int best_dim = 0;
    double best_spread = -1.0;
    for (int d = 0; d < dim(); ++d) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t k = begin; k < end; ++k) {
        const double v = points_(d, static_cast<Eigen::Index>(perm_[k]));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = d;
      }
    }
    if (best_spread <= 0.0) return id;  // all coincident: keep as leaf

    const std::size_t mid = begin + (end - begin) / 2;
    auto key = [&](std::size_t i) { return points_(best_dim, static_cast<Eigen::Index>(i)); };
    std::nth_element(perm_.begin() + static_cast<std::ptrdiff_t>(begin),
                     perm_.begin() + static_cast<std::ptrdiff_t>(mid),
                     perm_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    const double split = key(perm_[mid]);

    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    Node& n = nodes_[id];
    n.split_dim = best_dim;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  // Points in [begin, mid) have key <= split, points in [mid, end) have key >= split.
  void search_nearest(std::size_t id, const Vec& q, Best& best) const {
    const Node& n = nodes_[id];
    if (n.split_dim < 0) {
      for (std::size_t k = n.begin; k < n.end; ++k) offer(best, perm_[k], dist2(q, perm_[k]));
      return;
    }
    const double diff = q[n.split_dim] - n.split;
    const std::size_t first = diff <= 0.0 ? n.left : n.right;
    const std::size_t second = diff <= 0.0 ? n.right : n.left;
    search_nearest(first, q, best);
    if (diff * diff <= best.d2) search_nearest(second, q, best);
  }

  void search_k(std::size_t id, const Vec& q, std::size_t k, KHeap& heap) const {
    const Node& n = nodes_[id];
    if (n.split_dim < 0) {
      for (std::size_t j = n.begin; j < n.end; ++j) offer_k(heap, k, perm_[j], dist2(q, perm_[j]));
      return;
    }
    const double diff = q[n.split_dim] - n.split;
    const std::size_t first = diff <= 0.0 ? n.left : n.right;
    const std::size_t second = diff <= 0.0 ? n.right : n.left;
    search_k(first, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.top().first) search_k(second, q, k, heap);
  }

  template <typename Visit>
  void search_within(std::size_t id, const Vec& q, double r2, Visit&& visit) const {
    const Node& n = nodes_[id];
    if (n.split_dim < 0) {
      for (std::size_t j = n.begin; j < n.end; ++j)
        if (dist2(q, perm_[j]) <= r2) visit(perm_[j]);
      return;
    }
    const double diff = q[n.split_dim] - n.split;
    if (diff <= 0.0 || diff * diff <= r2) search_within(n.left, q, r2, visit);
    if (diff >= 0.0 || diff * diff <= r2) search_within(n.right, q, r2, visit);
  }

  Mat points_;
  std::vector<std::size_t> perm_;
  std::vector<Node> nodes_;
};

}  // namespace lmtd
