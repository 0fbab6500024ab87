#pragma once
// In-memory labelled image-embedding sets and seeded stratified splits.

#include "cocobm/bank.hpp"
#include "cocobm/core.hpp"

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

namespace cocobm {

struct Dataset {
  std::vector<Label> labels;
  std::vector<std::string> ids;
  std::vector<Vector> images;  // unit-normalized encoder outputs
  std::vector<std::size_t> targets;

  std::size_t size() const { return images.size(); }
  std::size_t num_labels() const { return labels.size(); }
  bool empty() const { return images.empty(); }

  void add(std::string id, Vector image, std::size_t target) {
    if (target >= labels.size()) throw Error("dataset: target index out of range");
    ids.push_back(std::move(id));
    images.push_back(std::move(image));
    targets.push_back(target);
  }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.labels = labels;
    for (auto i : indices) out.add(ids.at(i), images.at(i), targets.at(i));
    return out;
  }

  std::vector<std::vector<std::size_t>> indices_by_label() const {
    std::vector<std::vector<std::size_t>> out(labels.size());
    for (std::size_t i = 0; i < size(); ++i) out[targets[i]].push_back(i);
    return out;
  }

  std::vector<std::string> label_names() const {
    std::vector<std::string> out;
    for (const auto& l : labels) out.push_back(l.name);
    return out;
  }
};

// Per label: shuffle, then the first ceil(ratio * n) go to the first split.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const Dataset& data, double ratio,
                                                                                      std::uint64_t seed,
                                                                                      std::string_view stream) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("split ratio must lie in (0, 1)");
  Rng rng = make_rng(seed, stream);
  std::vector<std::size_t> first, second;
  for (auto idx : data.indices_by_label()) {
    seeded_shuffle(idx, rng);
    auto n_first = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_first ? first : second).push_back(idx[i]);
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {first, second};
}

struct ThreeWaySplit {
  std::vector<std::size_t> train, val, test;
};

// Per label: shuffle, then floor(train * n) and floor(val * n) samples go to
// train and val (at least one each when n >= 3); the rest is test.
inline ThreeWaySplit split_train_val_test(const Dataset& data, double train_frac, double val_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0))
    throw Error("split fractions must be positive and leave room for a test split");
  Rng rng = make_rng(seed, "data/split");
  ThreeWaySplit out;
  auto groups = data.indices_by_label();
  for (std::size_t j = 0; j < groups.size(); ++j) {
    auto& idx = groups[j];
    if (idx.size() < 3) throw Error("label '" + data.labels[j].name + "' needs at least 3 images to split");
    seeded_shuffle(idx, rng);
    const double n = static_cast<double>(idx.size());
    auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(train_frac * n + 1e-9)));
    auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(val_frac * n + 1e-9)));
    if (n_train + n_val >= idx.size()) n_train = idx.size() - n_val - 1;
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? out.train : i < n_train + n_val ? out.val : out.test).push_back(idx[i]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace cocobm
