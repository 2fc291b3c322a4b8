#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vplane/common.hpp"
#include "vplane/geometry.hpp"
#include "vplane/heatmap.hpp"
#include "vplane/image.hpp"
#include "vplane/rng.hpp"

namespace vplane {

enum class Category {
  Normal,
  Crowded,
  Night,
  NoLine,
  Shadow,
  Arrow,
  DazzleLight,
  Curve,
  Crossroad,
  Synthetic,
};

inline const char* to_string(Category c) {
  switch (c) {
    case Category::Normal: return "Normal";
    case Category::Crowded: return "Crowded";
    case Category::Night: return "Night";
    case Category::NoLine: return "NoLine";
    case Category::Shadow: return "Shadow";
    case Category::Arrow: return "Arrow";
    case Category::DazzleLight: return "DazzleLight";
    case Category::Curve: return "Curve";
    case Category::Crossroad: return "Crossroad";
    case Category::Synthetic: return "Synthetic";
  }
  throw std::logic_error("unreachable category");
}

inline Category parse_category(const std::string& s, const std::string& file, int line) {
  for (Category c :
       {Category::Normal, Category::Crowded, Category::Night, Category::NoLine, Category::Shadow,
        Category::Arrow, Category::DazzleLight, Category::Curve, Category::Crossroad,
        Category::Synthetic}) {
    if (s == to_string(c)) return c;
  }
  throw ParseError(file, line, "unknown category '" + s + "'");
}

struct Sample {
  ImageU8 image;
  std::vector<Lane> lanes;  // ordered left to right at the bottom edge
  VPAnnotation vp;
  Category category = Category::Synthetic;
  ImageDims dims;
};

struct SegTarget {
  ImageDims dims;
  std::vector<std::uint8_t> labels;  // 0 = background, k = lane k

  SegTarget() = default;
  explicit SegTarget(ImageDims d)
      : dims(d), labels(static_cast<std::size_t>(d.cell_count()), 0) {}

  std::uint8_t at(int row, int col) const {
    return labels[static_cast<std::size_t>(row) * dims.width + col];
  }
  std::uint8_t& at(int row, int col) {
    return labels[static_cast<std::size_t>(row) * dims.width + col];
  }
};

namespace detail {

inline double parse_double_token(const std::string& tok, const std::string& file, int line) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(file, line, "expected a number, got '" + tok + "'");
  }
  return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream iss(line);
  for (std::string tok; iss >> tok;) out.push_back(tok);
  return out;
}

}  // namespace detail

struct CulaneLanes {
  std::vector<Lane> lanes;
  int dropped = 0;  // lanes with fewer than 2 points
};

// CULane sidecar convention: one lane per line, alternating x y floats.
inline CulaneLanes load_culane_lanes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_culane_lanes: cannot open " + path.string());
  CulaneLanes out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::vector<std::string> toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() % 2 != 0) {
      throw ParseError(path.string(), line_no,
                       "odd token count " + std::to_string(toks.size()) +
                           ", coordinates must come in x y pairs");
    }
    std::vector<Point2D> pts;
    for (std::size_t i = 0; i < toks.size(); i += 2) {
      pts.push_back(Point2D{detail::parse_double_token(toks[i], path.string(), line_no),
                            detail::parse_double_token(toks[i + 1], path.string(), line_no)});
    }
    if (pts.size() < 2) {
      ++out.dropped;
      continue;
    }
    out.lanes.push_back(Lane{std::move(pts)});
  }
  return out;
}

// One record per line: `relative/path.jpg x y visible`; '#' lines are
// comments; a later record for the same path replaces the earlier one.
struct VPAnnotations {
  std::map<std::string, VPAnnotation> by_path;
  int duplicates = 0;
};

inline VPAnnotations load_vp_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_vp_annotations: cannot open " + path.string());
  VPAnnotations out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') continue;
    const std::vector<std::string> toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 4) {
      throw ParseError(path.string(), line_no,
                       "expected 'path x y visible', got " + std::to_string(toks.size()) +
                           " fields");
    }
    VPAnnotation vp;
    vp.point.x = detail::parse_double_token(toks[1], path.string(), line_no);
    vp.point.y = detail::parse_double_token(toks[2], path.string(), line_no);
    if (toks[3] == "1") {
      vp.visible = true;
    } else if (toks[3] == "0") {
      vp.visible = false;
    } else {
      throw ParseError(path.string(), line_no, "visible flag must be 0 or 1, got '" + toks[3] + "'");
    }
    if (out.by_path.count(toks[0])) ++out.duplicates;
    out.by_path[toks[0]] = vp;
  }
  return out;
}

// Lane k (1-based, left to right) stamped into the grid; where strokes
// overlap the higher index wins.
inline SegTarget make_seg_target(const std::vector<Lane>& lanes, ImageDims dims, int stroke_width,
                                 int max_lanes = 4) {
  require_valid(dims, "make_seg_target");
  if (static_cast<int>(lanes.size()) > max_lanes) {
    throw std::invalid_argument("make_seg_target: " + std::to_string(lanes.size()) +
                                " lanes exceed the maximum of " + std::to_string(max_lanes));
  }
  SegTarget target(dims);
  for (std::size_t k = 0; k < lanes.size(); ++k) {
    const BinaryMask mask = rasterize_lane(lanes[k], stroke_width, dims);
    for (std::size_t i = 0; i < mask.cells.size(); ++i) {
      if (mask.cells[i]) target.labels[i] = static_cast<std::uint8_t>(k + 1);
    }
  }
  return target;
}

struct SceneConfig {
  ImageDims dims{128, 64};
  int num_lanes = 3;       // in [2, max_lanes]
  double curvature = 0.0;  // lateral bend scale, 0 = straight lines through the VP
  double noise_std = 6.0;  // additive intensity noise
  std::uint64_t seed = 0;
  int stroke_width = 2;    // rendered and labeled lane stroke
};

inline void require_valid(const SceneConfig& cfg, int max_lanes) {
  require_valid(cfg.dims, "scene config");
  if (cfg.num_lanes < 2) {
    throw std::invalid_argument("scene config: num_lanes must be >= 2 so the VP is over-determined");
  }
  if (cfg.num_lanes > max_lanes) {
    throw std::invalid_argument("scene config: num_lanes exceeds max of " +
                                std::to_string(max_lanes));
  }
  if (cfg.curvature < 0.0 || cfg.noise_std < 0.0) {
    throw std::invalid_argument("scene config: curvature and noise_std must be >= 0");
  }
  if (cfg.stroke_width < 1) throw std::invalid_argument("scene config: stroke_width must be >= 1");
}

struct SyntheticScene {
  Sample sample;
  SegTarget target;
};

// Road-like toy scene: lanes run from the bottom edge to a shared VP in the
// upper-central region, drawn bright on a dark textured background. With
// curvature 0 every lane is an exact straight segment through the VP.
inline SyntheticScene generate_synthetic_scene(const SceneConfig& cfg, int max_lanes = 4) {
  require_valid(cfg, max_lanes);
  Rng rng(derive_seed(cfg.seed, 0x5C, 0));
  const double W = cfg.dims.width, H = cfg.dims.height;

  const Point2D vp{rng.uniform(0.25 * W, 0.75 * W), rng.uniform(0.2 * H, 0.5 * H)};

  // Bottom anchors in per-lane slots: distinct and already left to right.
  std::vector<double> anchors;
  const double lo = 0.05 * W, hi = 0.95 * W;
  const double slot = (hi - lo) / cfg.num_lanes;
  for (int k = 0; k < cfg.num_lanes; ++k) {
    anchors.push_back(lo + slot * (k + rng.uniform(0.15, 0.85)));
  }

  std::vector<Lane> lanes;
  constexpr int kPts = 12;
  const double y_bottom = H - 1.0;
  for (int k = 0; k < cfg.num_lanes; ++k) {
    const double coef = cfg.curvature * rng.uniform(-1.0, 1.0);
    std::vector<Point2D> pts;
    for (int i = 0; i < kPts; ++i) {
      // t runs 1 -> 0 from the bottom edge to the VP; the quadratic bump
      // vanishes at both ends so the endpoints are exact.
      const double t = 1.0 - static_cast<double>(i) / (kPts - 1);
      const double x = vp.x + t * (anchors[k] - vp.x) + coef * W * t * (1.0 - t);
      const double y = vp.y + t * (y_bottom - vp.y);
      pts.push_back(Point2D{x, y});
    }
    lanes.push_back(Lane{std::move(pts)});
  }

  Sample s;
  s.dims = cfg.dims;
  s.category = Category::Synthetic;
  s.vp = VPAnnotation{vp, true};
  s.image = ImageU8(cfg.dims);

  // Dark textured road: vertical ramp plus a low-frequency wave, then noise.
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
  const double phase = rng.uniform(0.0, 6.28318);
  const double base[3] = {26.0 + rng.uniform(-4.0, 4.0), 28.0 + rng.uniform(-4.0, 4.0),
                          30.0 + rng.uniform(-4.0, 4.0)};
  for (int r = 0; r < cfg.dims.height; ++r) {
    for (int c = 0; c < cfg.dims.width; ++c) {
      const double ramp = 18.0 * r / H;
      const double wave =
          9.0 * std::sin(6.28318 * (fx * c / W + fy * r / H) + phase);
      for (int ch = 0; ch < 3; ++ch) {
        s.image.at(r, c, ch) = clamp_u8(base[ch] + ramp + wave);
      }
    }
  }

  s.lanes = std::move(lanes);
  SegTarget target = make_seg_target(s.lanes, cfg.dims, cfg.stroke_width, max_lanes);
  for (std::size_t k = 0; k < s.lanes.size(); ++k) {
    const double bright = 205.0 + rng.uniform(-25.0, 35.0);
    const BinaryMask mask = rasterize_lane(s.lanes[k], cfg.stroke_width, cfg.dims);
    for (int r = 0; r < cfg.dims.height; ++r) {
      for (int c = 0; c < cfg.dims.width; ++c) {
        if (!mask.at(r, c)) continue;
        for (int ch = 0; ch < 3; ++ch) s.image.at(r, c, ch) = clamp_u8(bright);
      }
    }
  }
  if (cfg.noise_std > 0.0) {
    for (auto& px : s.image.data) {
      px = clamp_u8(px + rng.normal(0.0, cfg.noise_std));
    }
  }
  return SyntheticScene{std::move(s), std::move(target)};
}

// Horizontal flip and/or rotation about the center, applied consistently to
// the image, the lanes, the VP, and the label grid.
inline void augment_sample(Sample& s, SegTarget& target, bool flip, double angle_deg,
                           double angle_cap = 15.0) {
  if (std::abs(angle_deg) > angle_cap) {
    throw std::invalid_argument("augment_sample: |angle| " + std::to_string(angle_deg) +
                                " exceeds the cap of " + std::to_string(angle_cap));
  }
  const int W = s.dims.width, H = s.dims.height;
  if (flip) {
    ImageU8 flipped(s.dims);
    SegTarget tflip(s.dims);
    const int num_lanes = static_cast<int>(s.lanes.size());
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        for (int ch = 0; ch < 3; ++ch) flipped.at(r, c, ch) = s.image.at(r, W - 1 - c, ch);
        // Mirroring reverses left-to-right lane identity.
        const std::uint8_t lab = target.at(r, W - 1 - c);
        tflip.at(r, c) = lab == 0 ? 0 : static_cast<std::uint8_t>(num_lanes + 1 - lab);
      }
    }
    s.image = std::move(flipped);
    target = std::move(tflip);
    for (Lane& lane : s.lanes) {
      for (Point2D& p : lane.points) p.x = (W - 1) - p.x;
    }
    std::reverse(s.lanes.begin(), s.lanes.end());
    if (s.vp.visible) s.vp.point.x = (W - 1) - s.vp.point.x;
  }
  if (angle_deg != 0.0) {
    s.image = rotate_bilinear(s.image, angle_deg);
    SegTarget rotated(s.dims);
    const double rad = angle_deg * std::acos(-1.0) / 180.0;
    const double ca = std::cos(rad), sa = std::sin(rad);
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const double dx = c - cx, dy = r - cy;
        const int sx = static_cast<int>(std::lround(ca * dx + sa * dy + cx));
        const int sy = static_cast<int>(std::lround(-sa * dx + ca * dy + cy));
        rotated.at(r, c) =
            (sx >= 0 && sx < W && sy >= 0 && sy < H) ? target.at(sy, sx) : std::uint8_t(0);
      }
    }
    target = std::move(rotated);
    for (Lane& lane : s.lanes) {
      for (Point2D& p : lane.points) p = rotate_point(p, s.dims, angle_deg);
    }
    if (s.vp.visible) {
      s.vp.point = rotate_point(s.vp.point, s.dims, angle_deg);
      if (!contains(s.dims, s.vp.point)) s.vp.visible = false;
    }
  }
}

inline void resize_sample(Sample& s, SegTarget& target, ImageDims to) {
  require_valid(to, "resize_sample");
  if (s.dims == to) return;
  const double sx = static_cast<double>(to.width) / s.dims.width;
  const double sy = static_cast<double>(to.height) / s.dims.height;
  s.image = resize_bilinear(s.image, to);
  SegTarget resized(to);
  for (int r = 0; r < to.height; ++r) {
    const int src_r = std::min(s.dims.height - 1,
                               static_cast<int>((r + 0.5) * s.dims.height / to.height));
    for (int c = 0; c < to.width; ++c) {
      const int src_c =
          std::min(s.dims.width - 1, static_cast<int>((c + 0.5) * s.dims.width / to.width));
      resized.at(r, c) = target.at(src_r, src_c);
    }
  }
  target = std::move(resized);
  for (Lane& lane : s.lanes) {
    for (Point2D& p : lane.points) {
      p.x *= sx;
      p.y *= sy;
    }
  }
  if (s.vp.visible) {
    s.vp.point.x *= sx;
    s.vp.point.y *= sy;
  }
  s.dims = to;
}

// ---------------------------------------------------------------------------
// Manifest: a directory holding images, per-image CULane lane files, one VP
// annotation file, one category file, and a list file. Synthetic generation
// writes this layout and loading is shared with real CULane-style trees.

struct ManifestEntry {
  std::string rel_path;  // image path relative to the root
  Category category = Category::Synthetic;
  VPAnnotation vp;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
};

inline Manifest load_manifest(const std::filesystem::path& root, const std::string& list_file,
                              const std::string& vp_file, const std::string& category_file) {
  std::ifstream list(root / list_file);
  if (!list) throw IoError("load_manifest: cannot open " + (root / list_file).string());

  const VPAnnotations vps = load_vp_annotations(root / vp_file);

  std::map<std::string, Category> categories;
  {
    const std::filesystem::path cat_path = root / category_file;
    std::ifstream cats(cat_path);
    if (!cats) throw IoError("load_manifest: cannot open " + cat_path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(cats, line)) {
      ++line_no;
      if (!line.empty() && line[0] == '#') continue;
      const std::vector<std::string> toks = detail::split_ws(line);
      if (toks.empty()) continue;
      if (toks.size() != 2) {
        throw ParseError(cat_path.string(), line_no, "expected 'path category'");
      }
      categories[toks[0]] = parse_category(toks[1], cat_path.string(), line_no);
    }
  }

  Manifest m;
  m.root = root;
  std::string line;
  int line_no = 0;
  while (std::getline(list, line)) {
    ++line_no;
    const std::vector<std::string> toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 1) {
      throw ParseError((root / list_file).string(), line_no, "expected one path per line");
    }
    ManifestEntry e;
    e.rel_path = toks[0];
    const auto vp_it = vps.by_path.find(e.rel_path);
    if (vp_it != vps.by_path.end()) e.vp = vp_it->second;
    const auto cat_it = categories.find(e.rel_path);
    if (cat_it == categories.end()) {
      throw ParseError((root / category_file).string(), line_no,
                       "no category recorded for '" + e.rel_path + "'");
    }
    e.category = cat_it->second;
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline std::filesystem::path lanes_path_for(const std::filesystem::path& image_path) {
  std::filesystem::path p = image_path;
  p.replace_extension(".lines.txt");
  return p;
}

inline Sample load_sample(const Manifest& m, std::size_t index) {
  const ManifestEntry& e = m.entries.at(index);
  Sample s;
  s.image = read_ppm(m.root / e.rel_path);
  s.dims = s.image.dims;
  s.vp = e.vp;
  s.category = e.category;
  s.lanes = load_culane_lanes(lanes_path_for(m.root / e.rel_path)).lanes;
  return s;
}

}  // namespace vplane
