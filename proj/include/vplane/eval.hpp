#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vplane/config.hpp"
#include "vplane/dataset.hpp"
#include "vplane/geometry.hpp"
#include "vplane/heatmap.hpp"
#include "vplane/network.hpp"
#include "vplane/nn.hpp"
#include "vplane/tensor.hpp"

namespace vplane {

// Row-anchor readout: a lane channel exists when its per-row maxima average
// high enough over the bottom two thirds; existing lanes are sampled at
// evenly spaced anchor rows, taking the argmax column where confident.
template <typename T>
std::vector<Lane> extract_lanes_from_seg(const Tensor4<T>& probs, double exist_threshold = 0.5,
                                         double point_threshold = 0.3, int row_count = 18) {
  if (probs.n != 1 || probs.c < 2 || probs.h < 2 || probs.w < 2) {
    throw std::invalid_argument("extract_lanes_from_seg: expected (1,K+1,H,W), got " +
                                probs.shape_str());
  }
  if (row_count < 2) throw std::invalid_argument("extract_lanes_from_seg: row_count must be >= 2");
  const std::size_t plane = probs.plane();
  const T* data = probs.sample(0);
  for (std::size_t p = 0; p < plane; ++p) {
    double sum = 0.0;
    for (int ic = 0; ic < probs.c; ++ic) sum += static_cast<double>(data[ic * plane + p]);
    if (std::abs(sum - 1.0) > 1e-5) {
      throw std::invalid_argument("extract_lanes_from_seg: probabilities sum to " +
                                  std::to_string(sum) + ", not normalized");
    }
  }

  const int h = probs.h, w = probs.w;
  const int r0 = h / 3;  // region [r0, h)

  // Anchor rows, deduplicated when the region has fewer rows than requested.
  std::vector<int> anchor_rows;
  for (int i = 0; i < row_count; ++i) {
    const int r = r0 + static_cast<int>(std::lround(static_cast<double>(i) * (h - 1 - r0) /
                                                    (row_count - 1)));
    if (anchor_rows.empty() || anchor_rows.back() != r) anchor_rows.push_back(r);
  }

  std::vector<Lane> lanes;
  for (int k = 1; k < probs.c; ++k) {
    const T* ch = data + static_cast<std::size_t>(k) * plane;
    double mean_max = 0.0;
    for (int r = r0; r < h; ++r) {
      T row_max = ch[static_cast<std::size_t>(r) * w];
      for (int c = 1; c < w; ++c) row_max = std::max(row_max, ch[static_cast<std::size_t>(r) * w + c]);
      mean_max += static_cast<double>(row_max);
    }
    mean_max /= static_cast<double>(h - r0);
    if (mean_max < exist_threshold) continue;

    std::vector<Point2D> pts;
    for (int r : anchor_rows) {
      int best_c = 0;
      for (int c = 1; c < w; ++c) {
        if (ch[static_cast<std::size_t>(r) * w + c] > ch[static_cast<std::size_t>(r) * w + best_c]) {
          best_c = c;
        }
      }
      if (static_cast<double>(ch[static_cast<std::size_t>(r) * w + best_c]) >= point_threshold) {
        pts.push_back(Point2D{static_cast<double>(best_c), static_cast<double>(r)});
      }
    }
    if (pts.size() >= 2) lanes.push_back(Lane{std::move(pts)});
  }
  return lanes;
}

struct CategoryReport {
  Category category = Category::Synthetic;
  long tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  bool fp_only = false;  // Crossroad convention: gt lanes are not counted

  void finalize() {
    precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
};

struct NormDistHistogram {
  // [0,0.01), [0.01,0.02), ..., [0.09,0.1), [0.1,1]
  std::array<long, 11> bins{};
  double mean = 0.0;
  long n = 0;

  void add(double capped) {
    int bin = 10;
    for (int b = 0; b < 10; ++b) {
      if (capped < 0.01 * (b + 1)) {
        bin = b;
        break;
      }
    }
    ++bins[static_cast<std::size_t>(bin)];
    mean = (mean * static_cast<double>(n) + capped) / static_cast<double>(n + 1);
    ++n;
  }
};

struct EvalReport {
  std::vector<CategoryReport> categories;  // categories seen, in enum order
  CategoryReport total;                    // pooled non-Crossroad
  NormDistHistogram vp_histogram;
  int skipped = 0;  // images dropped for missing annotation files
};

struct ImageEvalInput {
  std::vector<Lane> preds;
  std::vector<Lane> gts;
  Category category = Category::Synthetic;
  ImageDims dims;
};

// Per-image IoU matching accumulated per category; Crossroad images count
// every prediction as a false positive and contribute nothing else.
inline EvalReport evaluate_lane_f1(const std::vector<ImageEvalInput>& images,
                                   const MatchConfig& cfg) {
  require_valid(cfg);
  std::map<int, CategoryReport> by_cat;
  EvalReport report;
  for (const ImageEvalInput& img : images) {
    CategoryReport& cat = by_cat[static_cast<int>(img.category)];
    cat.category = img.category;
    if (img.category == Category::Crossroad) {
      cat.fp_only = true;
      cat.fp += static_cast<long>(img.preds.size());
      continue;
    }
    const MatchResult m = match_lanes(img.preds, img.gts, cfg, img.dims);
    cat.tp += m.tp;
    cat.fp += m.fp;
    cat.fn += m.fn;
    report.total.tp += m.tp;
    report.total.fp += m.fp;
    report.total.fn += m.fn;
  }
  for (auto& [key, cat] : by_cat) {
    if (!cat.fp_only) cat.finalize();
    report.categories.push_back(cat);
  }
  report.total.category = Category::Synthetic;  // placeholder; rendered as "Total"
  report.total.finalize();
  return report;
}

inline NormDistHistogram vp_error_histogram(const std::vector<Point2D>& preds,
                                            const std::vector<VPAnnotation>& gts,
                                            const std::vector<ImageDims>& dims) {
  if (preds.size() != gts.size() || preds.size() != dims.size()) {
    throw std::invalid_argument("vp_error_histogram: preds, gts and dims must align");
  }
  NormDistHistogram h;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!gts[i].visible) continue;
    h.add(norm_dist(preds[i], gts[i].point, dims[i]));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoint-driven evaluation over a manifest.

template <typename T>
EvalReport run_evaluation(Model<T>& model, const Manifest& manifest, const RunConfig& cfg) {
  const ImageDims md = cfg.model.input_dims;
  const HeatmapConfig hc{cfg.heatmap_std, cfg.model.heatmap_stride};
  nn::SoftmaxC<T> softmax;

  std::vector<ImageEvalInput> lane_inputs;
  std::vector<Point2D> vp_preds;
  std::vector<VPAnnotation> vp_gts;
  std::vector<ImageDims> vp_dims;
  int skipped = 0;

  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    Sample s;
    try {
      s = load_sample(manifest, i);
    } catch (const IoError&) {
      ++skipped;
      continue;
    }
    const ImageDims native = s.dims;
    const double sx = static_cast<double>(native.width) / md.width;
    const double sy = static_cast<double>(native.height) / md.height;

    const ImageU8 resized = resize_bilinear(s.image, md);
    Tensor4<T> x(1, 3, md.height, md.width);
    for (int r = 0; r < md.height; ++r) {
      for (int c = 0; c < md.width; ++c) {
        for (int ch = 0; ch < 3; ++ch) {
          x.at(0, ch, r, c) = static_cast<T>(resized.at(r, c, ch) / 255.0);
        }
      }
    }
    const ForwardOutput<T> out = model.forward(x);

    const Tensor4<T> probs = softmax.forward(out.seg_logits);
    std::vector<Lane> preds = extract_lanes_from_seg(probs, cfg.eval.exist_threshold,
                                                     cfg.eval.point_threshold,
                                                     cfg.eval.row_anchors);
    for (Lane& lane : preds) {
      for (Point2D& p : lane.points) {
        p.x *= sx;
        p.y *= sy;
      }
    }
    lane_inputs.push_back(ImageEvalInput{std::move(preds), s.lanes, s.category, native});

    if (s.vp.visible) {
      Heatmap hm(ImageDims{out.vp_heatmap.w, out.vp_heatmap.h});
      const T* hv = out.vp_heatmap.sample(0);
      for (std::size_t k = 0; k < hm.values.size(); ++k) hm.values[k] = static_cast<double>(hv[k]);
      const DecodedVP dec = decode_vp(hm, hc);
      vp_preds.push_back(Point2D{dec.point.x * sx, dec.point.y * sy});
      vp_gts.push_back(s.vp);
      vp_dims.push_back(native);
    }
  }

  EvalReport report =
      evaluate_lane_f1(lane_inputs, MatchConfig{cfg.eval.line_width, cfg.eval.iou_threshold});
  report.vp_histogram = vp_error_histogram(vp_preds, vp_gts, vp_dims);
  report.skipped = skipped;
  return report;
}

// ---------------------------------------------------------------------------
// Rendering.

namespace detail {

inline std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

inline void render_report_row(std::string& out, const std::string& name,
                              const CategoryReport& c) {
  out += pad_right(name, 12);
  if (c.fp_only) {
    out += pad_left("-", 8) + pad_left(std::to_string(c.fp), 8) + pad_left("-", 8);
    out += pad_left("-", 11) + pad_left("-", 11) + pad_left("-", 11);
  } else {
    out += pad_left(std::to_string(c.tp), 8) + pad_left(std::to_string(c.fp), 8) +
           pad_left(std::to_string(c.fn), 8);
    out += pad_left(fixed6(c.precision), 11) + pad_left(fixed6(c.recall), 11) +
           pad_left(fixed6(c.f1), 11);
  }
  out += "\n";
}

}  // namespace detail

inline std::string render_report_text(const EvalReport& r) {
  std::string out;
  out += detail::pad_right("category", 12) + detail::pad_left("tp", 8) +
         detail::pad_left("fp", 8) + detail::pad_left("fn", 8) +
         detail::pad_left("precision", 11) + detail::pad_left("recall", 11) +
         detail::pad_left("f1", 11) + "\n";
  for (const CategoryReport& c : r.categories) {
    detail::render_report_row(out, to_string(c.category), c);
  }
  detail::render_report_row(out, "Total", r.total);
  out += "\n";
  out += "vp_mean_norm_dist " + detail::fixed6(r.vp_histogram.mean) + "\n";
  out += "vp_evaluated " + std::to_string(r.vp_histogram.n) + "\n";
  out += "skipped_images " + std::to_string(r.skipped) + "\n";
  return out;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  auto cat_json = [](const CategoryReport& c, const std::string& name) {
    nlohmann::json j{{"category", name}, {"fp", c.fp}};
    if (!c.fp_only) {
      j["tp"] = c.tp;
      j["fn"] = c.fn;
      j["precision"] = c.precision;
      j["recall"] = c.recall;
      j["f1"] = c.f1;
    }
    return j;
  };
  nlohmann::json cats = nlohmann::json::array();
  for (const CategoryReport& c : r.categories) cats.push_back(cat_json(c, to_string(c.category)));
  return nlohmann::json{
      {"categories", cats},
      {"total", cat_json(r.total, "Total")},
      {"vp_histogram",
       {{"bins", r.vp_histogram.bins}, {"mean", r.vp_histogram.mean}, {"n", r.vp_histogram.n}}},
      {"skipped", r.skipped}};
}

// One line per bin: `bin_lower_edge count fraction`.
inline std::string render_histogram_text(const NormDistHistogram& h) {
  std::string out;
  for (int b = 0; b < 11; ++b) {
    char edge[16];
    std::snprintf(edge, sizeof(edge), "%.2f", 0.01 * b);
    const double frac =
        h.n > 0 ? static_cast<double>(h.bins[static_cast<std::size_t>(b)]) / static_cast<double>(h.n)
                : 0.0;
    out += std::string(edge) + " " + std::to_string(h.bins[static_cast<std::size_t>(b)]) + " " +
           detail::fixed6(frac) + "\n";
  }
  return out;
}

}  // namespace vplane
