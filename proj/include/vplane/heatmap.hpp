#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "vplane/common.hpp"

namespace vplane {

// Row-major grid of Gaussian scores. Kept in double so the analytic values
// used as training targets survive a round trip through tests intact.
struct Heatmap {
  ImageDims dims;
  std::vector<double> values;

  Heatmap() = default;
  explicit Heatmap(ImageDims d) : dims(d), values(static_cast<std::size_t>(d.cell_count()), 0.0) {}

  double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * dims.width + col];
  }
  double& at(int row, int col) {
    return values[static_cast<std::size_t>(row) * dims.width + col];
  }
};

struct HeatmapConfig {
  double std = 7.0;  // in heatmap-grid pixels
  int stride = 4;    // input resolution / heatmap resolution
};

inline void require_valid(const HeatmapConfig& cfg) {
  if (!(cfg.std > 0.0)) {
    throw std::invalid_argument("heatmap config: std must be > 0");
  }
  if (cfg.stride < 1) {
    throw std::invalid_argument("heatmap config: stride must be >= 1");
  }
}

struct VPAnnotation {
  Point2D point{0.0, 0.0};  // input-image coordinates
  bool visible = false;
};

inline bool contains(ImageDims dims, const Point2D& p) {
  return p.x >= 0.0 && p.x < dims.width && p.y >= 0.0 && p.y < dims.height;
}

inline ImageDims heatmap_dims(ImageDims image_dims, const HeatmapConfig& cfg) {
  require_valid(image_dims, "heatmap_dims");
  require_valid(cfg);
  const ImageDims hd{image_dims.width / cfg.stride, image_dims.height / cfg.stride};
  require_valid(hd, "heatmap_dims: grid after stride");
  return hd;
}

// Gaussian bump around the VP. Cell (r,c) covers input pixels
// [c*stride, (c+1)*stride) x [r*stride, ...), so its center sits at
// ((c+0.5)*stride, (r+0.5)*stride); the VP maps to cell coordinates
// vp/stride - 0.5. The grid is divided by its max afterwards, pinning the
// peak cell to exactly 1.0.
inline Heatmap encode_vp(const VPAnnotation& vp, ImageDims image_dims, const HeatmapConfig& cfg) {
  if (!vp.visible) {
    throw std::invalid_argument("encode_vp: VP not visible, nothing to encode");
  }
  if (!vp.point.finite() || !contains(image_dims, vp.point)) {
    throw std::out_of_range("encode_vp: VP (" + std::to_string(vp.point.x) + "," +
                            std::to_string(vp.point.y) + ") outside image " +
                            std::to_string(image_dims.width) + "x" +
                            std::to_string(image_dims.height));
  }
  const ImageDims hd = heatmap_dims(image_dims, cfg);

  const double vx = vp.point.x / cfg.stride - 0.5;
  const double vy = vp.point.y / cfg.stride - 0.5;
  const double inv_two_var = 1.0 / (2.0 * cfg.std * cfg.std);

  Heatmap h(hd);
  double max_val = 0.0;
  for (int r = 0; r < hd.height; ++r) {
    for (int c = 0; c < hd.width; ++c) {
      const double dx = c - vx;
      const double dy = r - vy;
      const double v = std::exp(-(dx * dx + dy * dy) * inv_two_var);
      h.at(r, c) = v;
      if (v > max_val) max_val = v;
    }
  }
  for (double& v : h.values) v /= max_val;
  return h;
}

struct DecodedVP {
  Point2D point{0.0, 0.0};  // input-image coordinates
  double confidence = 0.0;
};

// Hard argmax, ties to the smallest row-major index, cell center mapped back
// to input coordinates.
inline DecodedVP decode_vp(const Heatmap& h, const HeatmapConfig& cfg) {
  require_valid(cfg);
  if (h.values.empty() || h.dims.cell_count() != static_cast<std::int64_t>(h.values.size())) {
    throw std::invalid_argument("decode_vp: empty or inconsistent heatmap");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.values.size(); ++i) {
    if (h.values[i] > h.values[best]) best = i;
  }
  const int r = static_cast<int>(best) / h.dims.width;
  const int c = static_cast<int>(best) % h.dims.width;
  DecodedVP out;
  out.point = Point2D{(c + 0.5) * cfg.stride, (r + 0.5) * cfg.stride};
  out.confidence = h.values[best];
  return out;
}

// ||pred - gt|| / image diagonal, capped at 0.1. Anything past the cap counts
// as a full miss and the cap keeps single outliers from dominating a mean.
inline double norm_dist(const Point2D& pred, const Point2D& gt, ImageDims image_dims) {
  require_valid(image_dims, "norm_dist");
  if (!pred.finite() || !gt.finite()) {
    throw std::invalid_argument("norm_dist: points must be finite");
  }
  const double d = distance(pred, gt) / image_dims.diagonal();
  return d > 0.1 ? 0.1 : d;
}

}  // namespace vplane
