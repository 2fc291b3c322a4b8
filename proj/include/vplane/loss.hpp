#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "vplane/dataset.hpp"
#include "vplane/network.hpp"
#include "vplane/tensor.hpp"

namespace vplane {

struct LossWeights {
  double lambda_vp = 15.0;
  double lambda_lane = 1.0;
};

inline void require_valid(const LossWeights& w) {
  if (w.lambda_vp < 0.0 || w.lambda_lane < 0.0) {
    throw std::invalid_argument("loss weights must be >= 0");
  }
}

struct LossBreakdown {
  double l_vp = 0.0;
  double l_lane = 0.0;
  double total = 0.0;
  bool vp_has_signal = false;  // false when every sample's VP was masked out
};

namespace detail {

template <typename T>
void require_heatmap_shapes(const Tensor4<T>& pred, const Tensor4<T>& target,
                            std::size_t mask_size) {
  if (!pred.same_shape(target)) {
    throw std::invalid_argument("heatmap_loss: shape mismatch " + pred.shape_str() + " vs " +
                                target.shape_str());
  }
  if (static_cast<std::size_t>(pred.n) != mask_size) {
    throw std::invalid_argument("heatmap_loss: mask length " + std::to_string(mask_size) +
                                " != batch size " + std::to_string(pred.n));
  }
}

}  // namespace detail

// Mean squared error over the cells of samples whose VP is visible. Hidden
// VPs contribute neither loss nor gradient; an all-hidden batch yields 0.
template <typename T>
double heatmap_loss(const Tensor4<T>& pred, const Tensor4<T>& target,
                    const std::vector<std::uint8_t>& vp_visible, bool* has_signal = nullptr) {
  detail::require_heatmap_shapes(pred, target, vp_visible.size());
  std::size_t visible = 0;
  double sum = 0.0;
  for (int s = 0; s < pred.n; ++s) {
    if (!vp_visible[s]) continue;
    ++visible;
    const T* p = pred.sample(s);
    const T* t = target.sample(s);
    for (std::size_t i = 0; i < pred.sample_stride(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      sum += d * d;
    }
  }
  if (has_signal) *has_signal = visible > 0;
  if (visible == 0) return 0.0;
  return sum / (static_cast<double>(visible) * pred.sample_stride());
}

template <typename T>
Tensor4<T> heatmap_loss_grad(const Tensor4<T>& pred, const Tensor4<T>& target,
                             const std::vector<std::uint8_t>& vp_visible) {
  detail::require_heatmap_shapes(pred, target, vp_visible.size());
  std::size_t visible = 0;
  for (auto v : vp_visible) visible += v ? 1 : 0;
  Tensor4<T> grad(pred.n, pred.c, pred.h, pred.w);
  if (visible == 0) return grad;
  const double scale = 2.0 / (static_cast<double>(visible) * pred.sample_stride());
  for (int s = 0; s < pred.n; ++s) {
    if (!vp_visible[s]) continue;
    const T* p = pred.sample(s);
    const T* t = target.sample(s);
    T* g = grad.sample(s);
    for (std::size_t i = 0; i < pred.sample_stride(); ++i) {
      g[i] = static_cast<T>(scale * (static_cast<double>(p[i]) - static_cast<double>(t[i])));
    }
  }
  return grad;
}

namespace detail {

template <typename T>
void require_seg_shapes(const Tensor4<T>& logits, const std::vector<SegTarget>& targets) {
  if (static_cast<std::size_t>(logits.n) != targets.size()) {
    throw std::invalid_argument("lane_loss: " + std::to_string(targets.size()) +
                                " targets for batch of " + std::to_string(logits.n));
  }
  for (const SegTarget& t : targets) {
    if (t.dims.height != logits.h || t.dims.width != logits.w) {
      throw std::invalid_argument("lane_loss: target dims " + std::to_string(t.dims.width) + "x" +
                                  std::to_string(t.dims.height) + " vs logits " +
                                  logits.shape_str());
    }
    for (std::uint8_t lab : t.labels) {
      if (lab >= logits.c) {
        throw std::invalid_argument("lane_loss: label " + std::to_string(lab) +
                                    " out of range for " + std::to_string(logits.c) + " channels");
      }
    }
  }
}

}  // namespace detail

// Unweighted per-cell cross entropy, mean over batch * H * W.
template <typename T>
double lane_loss(const Tensor4<T>& seg_logits, const std::vector<SegTarget>& targets) {
  detail::require_seg_shapes(seg_logits, targets);
  const std::size_t plane = seg_logits.plane();
  double sum = 0.0;
  for (int s = 0; s < seg_logits.n; ++s) {
    const T* z = seg_logits.sample(s);
    const std::uint8_t* lab = targets[s].labels.data();
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = static_cast<double>(z[p]);
      for (int ic = 1; ic < seg_logits.c; ++ic) {
        mx = std::max(mx, static_cast<double>(z[ic * plane + p]));
      }
      double lse = 0.0;
      for (int ic = 0; ic < seg_logits.c; ++ic) {
        lse += std::exp(static_cast<double>(z[ic * plane + p]) - mx);
      }
      lse = std::log(lse) + mx;
      sum += lse - static_cast<double>(z[lab[p] * plane + p]);
    }
  }
  return sum / (static_cast<double>(seg_logits.n) * plane);
}

template <typename T>
Tensor4<T> lane_loss_grad(const Tensor4<T>& seg_logits, const std::vector<SegTarget>& targets) {
  detail::require_seg_shapes(seg_logits, targets);
  const std::size_t plane = seg_logits.plane();
  Tensor4<T> grad(seg_logits.n, seg_logits.c, seg_logits.h, seg_logits.w);
  const double scale = 1.0 / (static_cast<double>(seg_logits.n) * plane);
  for (int s = 0; s < seg_logits.n; ++s) {
    const T* z = seg_logits.sample(s);
    const std::uint8_t* lab = targets[s].labels.data();
    T* g = grad.sample(s);
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = static_cast<double>(z[p]);
      for (int ic = 1; ic < seg_logits.c; ++ic) {
        mx = std::max(mx, static_cast<double>(z[ic * plane + p]));
      }
      double denom = 0.0;
      for (int ic = 0; ic < seg_logits.c; ++ic) {
        denom += std::exp(static_cast<double>(z[ic * plane + p]) - mx);
      }
      for (int ic = 0; ic < seg_logits.c; ++ic) {
        const double soft = std::exp(static_cast<double>(z[ic * plane + p]) - mx) / denom;
        const double onehot = ic == lab[p] ? 1.0 : 0.0;
        g[ic * plane + p] = static_cast<T>(scale * (soft - onehot));
      }
    }
  }
  return grad;
}

// Targets for one batch, as consumed by the combined loss.
template <typename T>
struct BatchTargets {
  Tensor4<T> vp_heatmaps;               // N x 1 x hh x hw; hidden samples hold zeros
  std::vector<std::uint8_t> vp_visible; // length N
  std::vector<SegTarget> seg;           // length N
};

template <typename T>
LossBreakdown total_loss(const ForwardOutput<T>& out, const BatchTargets<T>& targets,
                         const LossWeights& weights) {
  require_valid(weights);
  LossBreakdown b;
  b.l_vp = heatmap_loss(out.vp_heatmap, targets.vp_heatmaps, targets.vp_visible, &b.vp_has_signal);
  b.l_lane = lane_loss(out.seg_logits, targets.seg);
  b.total = weights.lambda_vp * b.l_vp + weights.lambda_lane * b.l_lane;
  return b;
}

template <typename T>
struct LossGrads {
  Tensor4<T> dseg;
  Tensor4<T> dvp;
};

template <typename T>
LossGrads<T> total_loss_grads(const ForwardOutput<T>& out, const BatchTargets<T>& targets,
                              const LossWeights& weights) {
  require_valid(weights);
  LossGrads<T> g;
  g.dvp = heatmap_loss_grad(out.vp_heatmap, targets.vp_heatmaps, targets.vp_visible);
  for (T& v : g.dvp.v) v = static_cast<T>(v * weights.lambda_vp);
  g.dseg = lane_loss_grad(out.seg_logits, targets.seg);
  for (T& v : g.dseg.v) v = static_cast<T>(v * weights.lambda_lane);
  return g;
}

}  // namespace vplane
