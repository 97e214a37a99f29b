#pragma once

#include <cstdint>
#include <vector>

#include "oodtk/common.hpp"
#include "oodtk/nn/tape.hpp"

namespace oodtk::nn {

enum class MadeOrder { Natural, Reversed };

/// Degree-based connectivity masks for a masked autoregressive conditioner
/// (inputs -> hidden layers -> output heads). Input degrees are 1..D in the
/// requested order; hidden degrees are drawn uniformly from [1, max(1, D-1)];
/// the output mask uses a strict inequality, so output i depends only on
/// inputs whose degree is strictly lower. The output block is replicated
/// `out_multiplier` times (one copy per parameter head).
inline std::vector<Mat> made_masks(int in_dim, const std::vector<int>& hidden_dims,
                                   int out_multiplier, MadeOrder order, std::uint64_t seed) {
  detail::require(in_dim >= 1, "made_masks: in_dim must be >= 1");
  detail::require(out_multiplier >= 1, "made_masks: out_multiplier must be >= 1");
  for (int h : hidden_dims) detail::require(h >= 1, "made_masks: hidden dims must be >= 1");

  std::vector<int> input_degrees(static_cast<std::size_t>(in_dim));
  for (int i = 0; i < in_dim; ++i) {
    input_degrees[static_cast<std::size_t>(i)] = order == MadeOrder::Natural ? i + 1 : in_dim - i;
  }

  Rng rng(seed);
  const int max_hidden_degree = std::max(1, in_dim - 1);
  std::vector<std::vector<int>> degrees;
  degrees.push_back(input_degrees);
  for (int h : hidden_dims) {
    std::vector<int> d(static_cast<std::size_t>(h));
    for (auto& x : d) {
      x = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_hidden_degree)));
    }
    degrees.push_back(std::move(d));
  }

  std::vector<Mat> masks;
  for (std::size_t l = 1; l < degrees.size(); ++l) {
    const auto& prev = degrees[l - 1];
    const auto& cur = degrees[l];
    Mat m(static_cast<Eigen::Index>(cur.size()), static_cast<Eigen::Index>(prev.size()));
    for (std::size_t r = 0; r < cur.size(); ++r) {
      for (std::size_t c = 0; c < prev.size(); ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cur[r] >= prev[c] ? 1.0 : 0.0;
      }
    }
    masks.push_back(std::move(m));
  }

  const auto& last = degrees.back();
  Mat out(static_cast<Eigen::Index>(in_dim) * out_multiplier, static_cast<Eigen::Index>(last.size()));
  for (int rep = 0; rep < out_multiplier; ++rep) {
    for (int i = 0; i < in_dim; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(rep) * in_dim + i;
      for (std::size_t c = 0; c < last.size(); ++c) {
        out(r, static_cast<Eigen::Index>(c)) =
            input_degrees[static_cast<std::size_t>(i)] > last[c] ? 1.0 : 0.0;
      }
    }
  }
  masks.push_back(std::move(out));
  return masks;
}

}  // namespace oodtk::nn
