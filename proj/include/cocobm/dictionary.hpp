#pragma once
// Learning-to-search concept selection. A dictionary of K atoms in the
// embedding space is trained jointly with a linear head so that
// softmax(head * (atoms * x)) classifies images; each atom is then replaced
// by its nearest unused candidate concept (cosine), strongest atoms first.

#include "cocobm/adam.hpp"
#include "cocobm/core.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace cocobm {

struct DictionaryConfig {
  std::size_t epochs = 100;
  double learning_rate = 0.01;
  double atom_init_std = 0.01;
  std::uint64_t seed = 0;
};

struct Dictionary {
  Matrix atoms;  // K x d
  Matrix head;   // C x K
  Vector head_bias;

  std::size_t num_atoms() const { return static_cast<std::size_t>(atoms.rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(head.rows()); }
};

struct SelectionResult {
  std::vector<std::size_t> selected;  // indices into the candidate list, in mapping order
  std::size_t head_width = 0;
  Dictionary dictionary;
  std::vector<double> loss_curve;
};

// Class index per image. With `targets` (repair mode) the listed labels get
// classes 0..|n|-1 and every other label collapses into class |n|.
inline std::vector<std::size_t> selection_classes(const std::vector<std::size_t>& labels, std::size_t num_labels,
                                                  const std::optional<std::vector<std::size_t>>& targets,
                                                  std::size_t& num_classes) {
  if (!targets) {
    num_classes = num_labels;
    return labels;
  }
  if (targets->empty()) throw Error("select_concepts: repair mode needs at least one target label");
  num_classes = targets->size() + 1;
  std::vector<std::size_t> out;
  for (auto y : labels) {
    auto it = std::find(targets->begin(), targets->end(), y);
    out.push_back(it == targets->end() ? targets->size() : static_cast<std::size_t>(it - targets->begin()));
  }
  return out;
}

inline double softmax_xent(const Vector& logits, std::size_t target, Vector& grad) {
  double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  double z = e.sum();
  grad = e / z;
  double loss = -std::log(grad(static_cast<Eigen::Index>(target)));
  grad(static_cast<Eigen::Index>(target)) -= 1.0;
  return loss;
}

inline SelectionResult select_concepts(const std::vector<Vector>& candidates, std::size_t count,
                                       const std::vector<Vector>& images, const std::vector<std::size_t>& labels,
                                       std::size_t num_labels,
                                       const std::optional<std::vector<std::size_t>>& targets,
                                       const DictionaryConfig& cfg) {
  if (count == 0) throw Error("select_concepts: count must be positive");
  if (candidates.size() < count)
    throw Error("select_concepts: candidate pool has " + std::to_string(candidates.size()) + " concepts, fewer than " +
                std::to_string(count) + " requested");
  if (images.empty() || images.size() != labels.size()) throw Error("select_concepts: need labelled images");
  if (candidates.size() > 1) {
    bool all_same = std::all_of(candidates.begin() + 1, candidates.end(),
                                [&](const Vector& c) { return (c - candidates.front()).norm() < 1e-12; });
    if (all_same) throw Error("select_concepts: candidate embeddings are all identical");
  }

  SelectionResult result;
  std::size_t C = 0;
  auto classes = selection_classes(labels, num_labels, targets, C);
  result.head_width = C;

  const auto K = static_cast<Eigen::Index>(count);
  const auto d = images.front().size();
  Rng rng = make_rng(cfg.seed, "select/init");
  Gaussian g(rng);
  Dictionary& dict = result.dictionary;
  dict.atoms.resize(K, d);
  for (Eigen::Index r = 0; r < K; ++r)
    for (Eigen::Index c = 0; c < d; ++c) dict.atoms(r, c) = g() * cfg.atom_init_std;
  dict.head.resize(static_cast<Eigen::Index>(C), K);
  const double head_std = 1.0 / std::sqrt(static_cast<double>(K));
  for (Eigen::Index r = 0; r < dict.head.rows(); ++r)
    for (Eigen::Index c = 0; c < K; ++c) dict.head(r, c) = g() * head_std;
  dict.head_bias = Vector::Zero(static_cast<Eigen::Index>(C));

  Adam<Matrix> opt_atoms(cfg.learning_rate), opt_head(cfg.learning_rate);
  Adam<Vector> opt_bias(cfg.learning_rate);
  const double inv_n = 1.0 / static_cast<double>(images.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Matrix g_atoms = Matrix::Zero(K, d);
    Matrix g_head = Matrix::Zero(dict.head.rows(), K);
    Vector g_bias = Vector::Zero(dict.head_bias.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      Vector h = dict.atoms * images[i];
      Vector logits = dict.head * h + dict.head_bias;
      Vector gl;
      loss += softmax_xent(logits, classes[i], gl) * inv_n;
      gl *= inv_n;
      g_head += gl * h.transpose();
      g_bias += gl;
      Vector gh = dict.head.transpose() * gl;
      g_atoms += gh * images[i].transpose();
    }
    result.loss_curve.push_back(loss);
    opt_atoms.step(dict.atoms, g_atoms);
    opt_head.step(dict.head, g_head);
    opt_bias.step(dict.head_bias, g_bias);
  }

  // Strongest atoms (largest head-column norm) pick first.
  std::vector<std::size_t> atom_order(count);
  std::iota(atom_order.begin(), atom_order.end(), 0);
  std::stable_sort(atom_order.begin(), atom_order.end(), [&](std::size_t a, std::size_t b) {
    return dict.head.col(static_cast<Eigen::Index>(a)).norm() > dict.head.col(static_cast<Eigen::Index>(b)).norm();
  });
  std::vector<Vector> unit_candidates;
  for (const auto& c : candidates) unit_candidates.push_back(c.normalized());
  std::vector<bool> used(candidates.size(), false);
  for (auto a : atom_order) {
    Vector atom = dict.atoms.row(static_cast<Eigen::Index>(a)).transpose();
    double n = atom.norm();
    if (n > 0) atom /= n;
    // (atom, head column) and (-atom, -head column) are the same model; orient
    // the atom so it supports the class it weighs most (the merged negative
    // class in repair mode does not count).
    Eigen::Index rows = targets ? dict.head.rows() - 1 : dict.head.rows();
    Eigen::Index strongest = 0;
    for (Eigen::Index c = 1; c < rows; ++c)
      if (std::abs(dict.head(c, static_cast<Eigen::Index>(a))) >
          std::abs(dict.head(strongest, static_cast<Eigen::Index>(a))))
        strongest = c;
    if (dict.head(strongest, static_cast<Eigen::Index>(a)) < 0.0) atom = -atom;
    std::size_t best = candidates.size();
    double best_cos = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (used[c]) continue;
      double cs = atom.dot(unit_candidates[c]);
      if (cs > best_cos) {
        best_cos = cs;
        best = c;
      }
    }
    used[best] = true;
    result.selected.push_back(best);
  }
  return result;
}

}  // namespace cocobm
