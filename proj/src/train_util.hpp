#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "aeda/ops.hpp"
#include "aeda/rng.hpp"
#include "aeda/tensor.hpp"

// Training-loop plumbing shared by the auto-encoder, classifier-head, and
// adversarial stages. Private to the library sources.

namespace aeda {

constexpr double kInf = std::numeric_limits<double>::infinity();

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& idx,
                                                          std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                     idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> hold;
};

// Shuffles and peels off a tenth of the indices for early-stop monitoring.
inline HoldoutSplit split_holdout(std::vector<std::size_t> idx, Rng& rng) {
  rng.shuffle(idx);
  const std::size_t n_hold = idx.size() / 10;
  HoldoutSplit split;
  split.hold.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
  split.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
  return split;
}

struct EarlyStopper {
  double best = kInf;
  std::size_t bad = 0;
  bool improved(double v) {
    if (v < best) {
      best = v;
      bad = 0;
      return true;
    }
    ++bad;
    return false;
  }
};

using ParamSnapshot = std::vector<std::pair<Tensor, Tensor>>;

inline ParamSnapshot snapshot_params(const std::vector<LayerParams*>& params) {
  ParamSnapshot snap;
  for (const LayerParams* p : params) snap.emplace_back(p->weights, p->bias);
  return snap;
}

inline void restore_snapshot(const std::vector<LayerParams*>& params, const ParamSnapshot& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->weights = snap[i].first;
    params[i]->bias = snap[i].second;
  }
}

// Moves the gradient accumulated on `t` into a standalone tensor usable as a
// stack's upstream gradient.
inline Tensor grad_from(Tensor& t) {
  Tensor g(t.shape());
  const auto& gv = t.grad_vec();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = gv[i];
  t.drop_grad();
  return g;
}

inline Tensor gather_rows(const Tensor& matrix, const std::vector<std::size_t>& rows) {
  const std::size_t width = matrix.dim(1);
  Tensor out({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = matrix[rows[r] * width + c];
  return out;
}

}  // namespace aeda
