#pragma once
// Seeded k-means (k-means++ init, Lloyd iterations) and per-label
// representative instance selection.

#include "cocobm/dataset.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace cocobm {

struct KMeansResult {
  std::vector<Vector> centroids;
  std::vector<std::size_t> assignment;
  std::size_t iterations = 0;
};

inline KMeansResult kmeans(const std::vector<Vector>& points, std::size_t k, Rng& rng, std::size_t max_iter = 100) {
  if (k == 0 || points.size() < k) throw Error("kmeans: need at least k points");
  KMeansResult res;
  // k-means++ seeding
  res.centroids.push_back(points[uniform_index(rng, points.size())]);
  std::vector<double> d2(points.size());
  while (res.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : res.centroids) best = std::min(best, (points[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = uniform_index(rng, points.size());
    } else {
      double r = uniform01(rng) * total, acc = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (acc >= r && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    res.centroids.push_back(points[pick]);
  }

  res.assignment.assign(points.size(), k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double dd = (points[i] - res.centroids[c]).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    res.iterations = it + 1;
    std::vector<Vector> sums(k, Vector::Zero(points.front().size()));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      sums[res.assignment[i]] += points[i];
      ++counts[res.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c]) {
        res.centroids[c] = sums[c] / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it to the point farthest from its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        double dd = (points[i] - res.centroids[res.assignment[i]]).squaredNorm();
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      res.centroids[c] = points[far];
      changed = true;
    }
    if (!changed) break;
  }
  return res;
}

// Frozen per-label representatives; `indices` point into the source dataset.
struct InstanceSet {
  std::size_t beta = 0;
  std::vector<std::vector<std::size_t>> per_label;
  bool frozen = false;

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (const auto& v : per_label) out.insert(out.end(), v.begin(), v.end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

// For each label, k-means with k = beta on that label's embeddings; each
// centroid is replaced by its nearest not-yet-chosen real sample.
inline InstanceSet select_instances(const Dataset& data, std::size_t beta, std::uint64_t seed) {
  if (beta == 0) throw Error("select_instances: beta must be at least 1");
  InstanceSet set;
  set.beta = beta;
  auto by_label = data.indices_by_label();
  for (std::size_t y = 0; y < by_label.size(); ++y) {
    const auto& idx = by_label[y];
    if (idx.size() < beta)
      throw Error("select_instances: label '" + data.labels[y].name + "' has " + std::to_string(idx.size()) +
                  " images, fewer than beta = " + std::to_string(beta) + "; use a smaller beta");
    std::vector<Vector> pts;
    for (auto i : idx) pts.push_back(data.images[i]);
    Rng rng = make_rng(seed, "instances/" + data.labels[y].name);
    auto km = kmeans(pts, beta, rng);
    std::vector<bool> taken(idx.size(), false);
    std::vector<std::size_t> chosen;
    for (const auto& c : km.centroids) {
      std::size_t best = idx.size();
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (taken[i]) continue;
        double dd = (pts[i] - c).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = i;
        }
      }
      taken[best] = true;
      chosen.push_back(idx[best]);
    }
    std::sort(chosen.begin(), chosen.end());
    set.per_label.push_back(std::move(chosen));
  }
  set.frozen = true;
  return set;
}

}  // namespace cocobm
