#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <vector>

#include "oodtk/common.hpp"
#include "oodtk/dataset.hpp"

namespace oodtk {

struct SplitSpec {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(train > 0 && val > 0 && test > 0, "split: fractions must be positive");
    detail::require(std::abs(train + val + test - 1.0) < 1e-9, "split: fractions must sum to 1");
  }
};

struct Split {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Largest-remainder apportionment of n rows into the three fractions.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
  const std::array<double, 3> fractions{spec.train, spec.val, spec.test};
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(exact);
    remainders[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < n; ++k) {
    sizes[order[k % 3]] += 1;
    ++assigned;
  }
  return sizes;
}

/// Disjoint covering partition by a seeded uniform permutation.
inline Split split(const Dataset& data, const SplitSpec& spec) {
  spec.validate();
  detail::require(data.n_rows() >= 3, "split: need at least 3 rows");
  const auto sizes = split_sizes(data.n_rows(), spec);

  std::vector<std::size_t> order(data.n_rows());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(order);

  auto take = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                  order.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return data.subset(rows);
  };
  return Split{take(0, sizes[0]), take(sizes[0], sizes[1]), take(sizes[0] + sizes[1], sizes[2])};
}

}  // namespace oodtk
