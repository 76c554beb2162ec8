#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "rng.hpp"

namespace diffsr {

/// N samples of a D-dimensional input with scalar targets. Inputs are stored row-major.
struct PointSet {
  std::size_t dims = 1;
  std::vector<double> inputs;   // size() * dims
  std::vector<double> targets;  // size()

  std::size_t size() const noexcept { return targets.size(); }
  bool empty() const noexcept { return targets.empty(); }

  std::span<const double> row(std::size_t i) const { return {inputs.data() + i * dims, dims}; }

  void push_back(std::span<const double> x, double y) {
    if (x.size() != dims) throw std::invalid_argument("PointSet::push_back: dimension mismatch");
    inputs.insert(inputs.end(), x.begin(), x.end());
    targets.push_back(y);
  }

  bool all_finite() const noexcept {
    for (double v : inputs)
      if (!std::isfinite(v)) return false;
    for (double v : targets)
      if (!std::isfinite(v)) return false;
    return true;
  }

  PointSet subset(std::span<const std::size_t> rows) const {
    PointSet out;
    out.dims = dims;
    out.inputs.reserve(rows.size() * dims);
    out.targets.reserve(rows.size());
    for (auto r : rows) out.push_back(row(r), targets[r]);
    return out;
  }
};

struct TrainTestSplit {
  PointSet train;
  PointSet test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

/// Shuffles row indices with a seeded stream and takes the first round(fraction * N) for training.
inline TrainTestSplit train_test_split(const PointSet& pts, double train_fraction, std::uint64_t seed) {
  if (train_fraction <= 0 || train_fraction > 1) throw std::invalid_argument("train_test_split: bad fraction");
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, {0x5b11});
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_int<std::size_t>(rng, 0, i - 1)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(pts.size())));
  TrainTestSplit s;
  s.train_rows.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test_rows.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train_rows.begin(), s.train_rows.end());
  std::sort(s.test_rows.begin(), s.test_rows.end());
  s.train = pts.subset(s.train_rows);
  s.test = pts.subset(s.test_rows);
  return s;
}

}  // namespace diffsr
