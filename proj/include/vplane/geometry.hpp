#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vplane/common.hpp"

namespace vplane {

// Ordered polyline in pixel coordinates. Consecutive points must not coincide.
struct Lane {
  std::vector<Point2D> points;

  Lane() = default;
  explicit Lane(std::vector<Point2D> pts) : points(std::move(pts)) {}
};

inline void require_valid(const Lane& lane, const char* who) {
  if (lane.points.size() < 2) {
    throw std::invalid_argument(std::string(who) + ": lane needs at least 2 points, got " +
                                std::to_string(lane.points.size()));
  }
  for (std::size_t i = 0; i < lane.points.size(); ++i) {
    if (!lane.points[i].finite()) {
      throw std::invalid_argument(std::string(who) + ": lane point " + std::to_string(i) +
                                  " is not finite");
    }
    if (i > 0 && squared_distance(lane.points[i - 1], lane.points[i]) <= 1e-18) {
      throw std::invalid_argument(std::string(who) + ": consecutive lane points " +
                                  std::to_string(i - 1) + "," + std::to_string(i) +
                                  " coincide");
    }
  }
}

// Row-major {0,1} grid of size height x width.
struct BinaryMask {
  ImageDims dims;
  std::vector<std::uint8_t> cells;

  BinaryMask() = default;
  explicit BinaryMask(ImageDims d) : dims(d), cells(static_cast<std::size_t>(d.cell_count()), 0) {}

  std::uint8_t at(int row, int col) const {
    return cells[static_cast<std::size_t>(row) * dims.width + col];
  }
  void set(int row, int col) {
    cells[static_cast<std::size_t>(row) * dims.width + col] = 1;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : cells) n += v;
    return n;
  }
};

struct MatchConfig {
  int line_width = 30;
  double iou_threshold = 0.5;
};

inline void require_valid(const MatchConfig& cfg) {
  if (cfg.line_width < 1) {
    throw std::invalid_argument("match config: line_width must be >= 1");
  }
  if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0)) {
    throw std::invalid_argument("match config: iou_threshold must be in (0, 1]");
  }
}

namespace detail {

// Squared distance from point p to segment [a, b].
inline double point_segment_sq_dist(const Point2D& p, const Point2D& a, const Point2D& b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double wx = p.x - a.x;
  const double wy = p.y - a.y;
  const double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = wx - t * vx;
  const double dy = wy - t * vy;
  return dx * dx + dy * dy;
}

}  // namespace detail

// A pixel (r, c) is set iff the distance from its center (c, r) to the nearest
// point of the polyline is <= width_px / 2. Pixels outside the canvas are
// clipped, never emitted.
inline BinaryMask rasterize_lane(const Lane& lane, int width_px, ImageDims dims) {
  require_valid(lane, "rasterize_lane");
  require_valid(dims, "rasterize_lane");
  if (width_px < 1) {
    throw std::invalid_argument("rasterize_lane: width_px must be >= 1");
  }

  BinaryMask mask(dims);
  const double radius = width_px / 2.0;
  const double r2 = radius * radius;

  for (std::size_t i = 0; i + 1 < lane.points.size(); ++i) {
    const Point2D& a = lane.points[i];
    const Point2D& b = lane.points[i + 1];
    // Only pixels inside the segment's radius-padded bounding box can be hit.
    const int c0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius)));
    const int c1 = std::min(dims.width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius)));
    const int r0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius)));
    const int r1 = std::min(dims.height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius)));
    for (int row = r0; row <= r1; ++row) {
      for (int col = c0; col <= c1; ++col) {
        if (mask.at(row, col)) continue;
        const Point2D center{static_cast<double>(col), static_cast<double>(row)};
        if (detail::point_segment_sq_dist(center, a, b) <= r2) {
          mask.set(row, col);
        }
      }
    }
  }
  return mask;
}

// |a n b| / |a u b|; 0 when both masks are empty.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.dims != b.dims) {
    throw std::invalid_argument("mask_iou: dims mismatch " + std::to_string(a.dims.width) + "x" +
                                std::to_string(a.dims.height) + " vs " +
                                std::to_string(b.dims.width) + "x" + std::to_string(b.dims.height));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    inter += a.cells[i] & b.cells[i];
    uni += a.cells[i] | b.cells[i];
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct MatchResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::vector<std::pair<int, int>> pairs;  // (pred index, gt index)
};

namespace detail {

// Exact maximum-total-weight one-to-one assignment over eligible entries,
// by subset DP on the smaller side. Lane counts per image are single digit,
// so the 2^m table stays tiny.
inline MatchResult assign_max_total(const std::vector<std::vector<double>>& iou, int n_pred,
                                    int n_gt, double threshold) {

  const bool transpose = n_gt > n_pred;
  const int rows = transpose ? n_gt : n_pred;
  const int cols = transpose ? n_pred : n_gt;
  auto weight = [&](int r, int c) { return transpose ? iou[c][r] : iou[r][c]; };

  if (cols > 20) {
    throw std::invalid_argument("match_lanes: more than 20 lanes on both sides is unsupported");
  }

  const std::size_t n_masks = static_cast<std::size_t>(1) << cols;
  const double neg = -1.0;
  std::vector<double> best(n_masks, neg);
  std::vector<std::int32_t> choice((rows + 1) * n_masks, -2);  // -2 unreachable, -1 skip row
  best[0] = 0.0;

  std::vector<double> cur(n_masks, neg), nxt(n_masks, neg);
  cur[0] = 0.0;
  for (int r = 0; r < rows; ++r) {
    std::fill(nxt.begin(), nxt.end(), neg);
    for (std::size_t m = 0; m < n_masks; ++m) {
      if (cur[m] < 0.0) continue;
      // Leave row r unmatched.
      if (cur[m] > nxt[m]) {
        nxt[m] = cur[m];
        choice[(r + 1) * n_masks + m] = -1;
      }
      for (int c = 0; c < cols; ++c) {
        if (m & (static_cast<std::size_t>(1) << c)) continue;
        const double w = weight(r, c);
        if (!(w > threshold)) continue;
        const std::size_t m2 = m | (static_cast<std::size_t>(1) << c);
        if (cur[m] + w > nxt[m2]) {
          nxt[m2] = cur[m] + w;
          choice[(r + 1) * n_masks + m2] = c;
        }
      }
    }
    cur.swap(nxt);
  }

  std::size_t best_mask = 0;
  for (std::size_t m = 1; m < n_masks; ++m) {
    if (cur[m] > cur[best_mask]) best_mask = m;
  }

  MatchResult result;
  std::size_t m = best_mask;
  for (int r = rows - 1; r >= 0; --r) {
    const std::int32_t c = choice[(r + 1) * n_masks + m];
    if (c >= 0) {
      const int pred = transpose ? c : r;
      const int gt = transpose ? r : c;
      result.pairs.emplace_back(pred, gt);
      m &= ~(static_cast<std::size_t>(1) << c);
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  result.tp = static_cast<int>(result.pairs.size());
  result.fp = n_pred - result.tp;
  result.fn = n_gt - result.tp;
  return result;
}

}  // namespace detail

// One-to-one matching maximizing total IoU among pairs with IoU strictly above
// the threshold. tp = matched pairs, fp = |preds| - tp, fn = |gts| - tp.
inline MatchResult match_lanes(const std::vector<Lane>& preds, const std::vector<Lane>& gts,
                               const MatchConfig& cfg, ImageDims dims) {
  require_valid(cfg);
  require_valid(dims, "match_lanes");

  std::vector<BinaryMask> pred_masks;
  pred_masks.reserve(preds.size());
  for (const Lane& lane : preds) pred_masks.push_back(rasterize_lane(lane, cfg.line_width, dims));
  std::vector<BinaryMask> gt_masks;
  gt_masks.reserve(gts.size());
  for (const Lane& lane : gts) gt_masks.push_back(rasterize_lane(lane, cfg.line_width, dims));

  std::vector<std::vector<double>> iou(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      iou[i][j] = mask_iou(pred_masks[i], gt_masks[j]);
    }
  }
  return detail::assign_max_total(iou, static_cast<int>(preds.size()),
                                  static_cast<int>(gts.size()), cfg.iou_threshold);
}

}  // namespace vplane
