#pragma once

// Shared fixtures for the network-level tests: tiny model configs small
// enough for finite differencing, random batch construction, and the
// gradient probes reused by both the unit suite and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vplane/heatmap.hpp"
#include "vplane/loss.hpp"
#include "vplane/network.hpp"
#include "vplane/rng.hpp"

namespace vplane::testsup {

// Small enough that every topology stays under 5k parameters, which keeps a
// full central-difference sweep affordable.
inline ModelConfig tiny_config(FusionTopology topology) {
  ModelConfig cfg;
  cfg.topology = topology;
  cfg.input_dims = ImageDims{16, 16};
  cfg.lane_categories = 2;
  cfg.base_channels = 4;
  cfg.encoder_depth = 0;
  cfg.heatmap_stride = 4;
  cfg.middle_channels = 4;
  return cfg;
}

template <typename T>
Tensor4<T> random_input(const ModelConfig& cfg, int n, Rng& rng) {
  Tensor4<T> x(n, 3, cfg.input_dims.height, cfg.input_dims.width);
  for (auto& v : x.v) v = static_cast<T>(rng.uniform());
  return x;
}

// One visible VP and (when n > 1) one hidden sample, so the masked heatmap
// loss path is always exercised.
template <typename T>
BatchTargets<T> random_targets(const ModelConfig& cfg, int n, Rng& rng) {
  const HeatmapConfig hcfg{3.0, cfg.heatmap_stride};
  const ImageDims hdims = heatmap_dims(cfg.input_dims, hcfg);
  BatchTargets<T> t;
  t.vp_heatmaps = Tensor4<T>(n, 1, hdims.height, hdims.width);
  t.vp_visible.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const bool visible = i == 0 || rng.uniform() < 0.7;
    t.vp_visible[static_cast<std::size_t>(i)] = visible ? 1 : 0;
    if (visible) {
      const VPAnnotation vp{{rng.uniform(1.0, cfg.input_dims.width - 1.0),
                             rng.uniform(1.0, cfg.input_dims.height - 1.0)},
                            true};
      const Heatmap h = encode_vp(vp, cfg.input_dims, hcfg);
      for (int r = 0; r < hdims.height; ++r)
        for (int c = 0; c < hdims.width; ++c)
          t.vp_heatmaps.at(i, 0, r, c) = static_cast<T>(h.at(r, c));
    }
  }
  for (int i = 0; i < n; ++i) {
    SegTarget seg(cfg.input_dims);
    for (auto& l : seg.labels)
      l = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(cfg.lane_categories + 1)));
    t.seg.push_back(std::move(seg));
  }
  return t;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t params_checked = 0;
};

// Central finite differences over every parameter against the analytic
// gradient of the weighted two-task loss.
inline GradCheckResult gradcheck_topology(FusionTopology topology, std::uint64_t seed,
                                          const LossWeights& weights = LossWeights{}) {
  const ModelConfig cfg = tiny_config(topology);
  Model<double> model(cfg, seed);
  Rng rng(derive_seed(seed, 0x96AD, static_cast<std::uint64_t>(topology)));
  // Zero-initialized biases leave whole ReLU preactivations sitting exactly
  // on the kink (all-zero windows propagate through zero-bias convs), where
  // a central difference measures the two-sided average instead of the
  // one-sided convention. Shift every bias off zero before differencing.
  for (auto& p : model.params()) {
    if (p.name.size() < 5 || p.name.compare(p.name.size() - 5, 5, ".bias") != 0) continue;
    for (auto& v : *p.value) {
      const double mag = rng.uniform(0.02, 0.08);
      v += rng.uniform() < 0.5 ? -mag : mag;
    }
  }
  const Tensor4<double> x = random_input<double>(cfg, 2, rng);
  const BatchTargets<double> targets = random_targets<double>(cfg, 2, rng);

  const auto loss_at = [&]() {
    const ForwardOutput<double> out = model.forward(x);
    return total_loss(out, targets, weights).total;
  };

  const ForwardOutput<double> out = model.forward(x);
  const LossGrads<double> g = total_loss_grads(out, targets, weights);
  model.zero_grad();
  model.backward(g.dseg, g.dvp);

  GradCheckResult res;
  // The 1e-3 denominator floor keeps finite-difference roundoff on
  // noise-level gradients from registering as disagreement; structural
  // errors land orders of magnitude above it. The small step also shrinks
  // the window in which a difference can straddle a leftover ReLU kink.
  const double eps = 1e-6;
  for (auto& p : model.params()) {
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      const double orig = (*p.value)[i];
      (*p.value)[i] = orig + eps;
      const double lp = loss_at();
      (*p.value)[i] = orig - eps;
      const double lm = loss_at();
      (*p.value)[i] = orig;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = (*p.grad)[i];
      const double rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p.name + "[" + std::to_string(i) + "]";
      }
      ++res.params_checked;
    }
  }
  return res;
}

template <typename T>
double max_abs_grad_with_prefix(Model<T>& model, const std::string& prefix) {
  double m = 0.0;
  for (auto& p : model.params()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    for (const T v : *p.grad) m = std::max(m, static_cast<double>(std::abs(v)));
  }
  return m;
}

// Backpropagates one task's loss in isolation and reports the largest
// gradient magnitude reaching the other task's head.
template <typename T>
double cross_task_grad(Model<T>& model, const Tensor4<T>& x, const BatchTargets<T>& targets,
                       bool vp_loss_into_decoder, const LossWeights& weights = LossWeights{}) {
  const ForwardOutput<T> out = model.forward(x);
  const LossGrads<T> g = total_loss_grads(out, targets, weights);
  Tensor4<T> zero_seg(out.seg_logits.n, out.seg_logits.c, out.seg_logits.h, out.seg_logits.w);
  Tensor4<T> zero_vp(out.vp_heatmap.n, out.vp_heatmap.c, out.vp_heatmap.h, out.vp_heatmap.w);
  model.zero_grad();
  if (vp_loss_into_decoder) {
    model.backward(zero_seg, g.dvp);
    return max_abs_grad_with_prefix(model, "decoder.");
  }
  model.backward(g.dseg, zero_vp);
  return max_abs_grad_with_prefix(model, "vp_head.");
}

}  // namespace vplane::testsup
