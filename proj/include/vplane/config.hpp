#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vplane/checkpoint.hpp"
#include "vplane/common.hpp"
#include "vplane/loss.hpp"
#include "vplane/network.hpp"
#include "vplane/version.hpp"

namespace vplane {

struct DataConfig {
  std::string train_root;
  std::string eval_root;
  std::string list = "list.txt";
  std::string vp_file = "vp_annotations.txt";
  std::string categories = "categories.txt";
  int seg_stroke_width = 2;  // training-target stroke at the dataset's native scale
  double val_fraction = 0.1;
};

struct GenerateConfig {
  int count = 2000;
  ImageDims dims{128, 64};
  int min_lanes = 2;
  int max_lanes = 4;
  double curvature_max = 0.3;
  double noise_std = 6.0;
  int stroke_width = 2;
  std::uint64_t seed = 1;
};

struct AugmentConfig {
  bool flip = true;
  bool rotation = true;
  double rotation_cap = 15.0;
};

struct TrainConfig {
  int epochs = 15;
  int batch_size = 8;
  double lr0 = 0.001;
  double decay_factor = 0.1;
  int decay_every = 5;
  double momentum = 0.9;
  LossWeights weights;
  AugmentConfig augment;
  std::uint64_t seed = 42;
};

inline void require_valid(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(cfg.lr0 > 0.0)) throw std::invalid_argument("train config: lr0 must be > 0");
  if (!(cfg.decay_factor > 0.0 && cfg.decay_factor <= 1.0)) {
    throw std::invalid_argument("train config: decay_factor must be in (0, 1]");
  }
  if (cfg.decay_every < 1) throw std::invalid_argument("train config: decay_every must be >= 1");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
    throw std::invalid_argument("train config: momentum must be in [0, 1)");
  }
  require_valid(cfg.weights);
}

struct EvalConfig {
  int line_width = 30;
  double iou_threshold = 0.5;
  double exist_threshold = 0.5;
  double point_threshold = 0.3;
  int row_anchors = 18;
  std::string checkpoint;  // path, relative to the cwd unless absolute
};

struct PredictConfig {
  int count = 8;  // number of overlay renders to emit
  std::string checkpoint;
};

struct RunConfig {
  ModelConfig model;
  double heatmap_std = 7.0;
  DataConfig data;
  GenerateConfig generate;
  TrainConfig train;
  EvalConfig eval;
  PredictConfig predict;
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["model"] = model_config_to_json(c.model);
  j["heatmap"] = {{"std", c.heatmap_std}};
  j["data"] = {{"train_root", c.data.train_root},
               {"eval_root", c.data.eval_root},
               {"list", c.data.list},
               {"vp_file", c.data.vp_file},
               {"categories", c.data.categories},
               {"seg_stroke_width", c.data.seg_stroke_width},
               {"val_fraction", c.data.val_fraction}};
  j["generate"] = {{"count", c.generate.count},
                   {"width", c.generate.dims.width},
                   {"height", c.generate.dims.height},
                   {"min_lanes", c.generate.min_lanes},
                   {"max_lanes", c.generate.max_lanes},
                   {"curvature_max", c.generate.curvature_max},
                   {"noise_std", c.generate.noise_std},
                   {"stroke_width", c.generate.stroke_width},
                   {"seed", c.generate.seed}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr0", c.train.lr0},
                {"decay_factor", c.train.decay_factor},
                {"decay_every", c.train.decay_every},
                {"momentum", c.train.momentum},
                {"weights", {{"lambda_vp", c.train.weights.lambda_vp}, {"lambda_lane", c.train.weights.lambda_lane}}},
                {"augment",
                 {{"flip", c.train.augment.flip},
                  {"rotation", c.train.augment.rotation},
                  {"rotation_cap", c.train.augment.rotation_cap}}},
                {"seed", c.train.seed}};
  j["eval"] = {{"line_width", c.eval.line_width},
               {"iou_threshold", c.eval.iou_threshold},
               {"exist_threshold", c.eval.exist_threshold},
               {"point_threshold", c.eval.point_threshold},
               {"row_anchors", c.eval.row_anchors},
               {"checkpoint", c.eval.checkpoint}};
  j["predict"] = {{"count", c.predict.count}, {"checkpoint", c.predict.checkpoint}};
  return j;
}

namespace detail {

// Every key in `given` must exist in `known` (recursively); catches typos
// like `train.lr` instead of failing silently.
inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& known,
                                const std::string& prefix) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!known.is_object() || !known.contains(key)) {
      throw std::invalid_argument("config: unknown key '" + path + "'");
    }
    reject_unknown_keys(value, known.at(key), path);
  }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// Fills a RunConfig from JSON; absent keys keep their defaults, unknown keys
// are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::reject_unknown_keys(j, to_json(c), "");
  try {
    if (j.contains("model")) {
      const auto& m = j.at("model");
      std::string topo = to_string(c.model.topology);
      detail::read_if(m, "topology", topo);
      c.model.topology = parse_topology(topo);
      if (m.contains("input_dims")) {
        detail::read_if(m.at("input_dims"), "width", c.model.input_dims.width);
        detail::read_if(m.at("input_dims"), "height", c.model.input_dims.height);
      }
      detail::read_if(m, "lane_categories", c.model.lane_categories);
      detail::read_if(m, "base_channels", c.model.base_channels);
      detail::read_if(m, "encoder_depth", c.model.encoder_depth);
      detail::read_if(m, "heatmap_stride", c.model.heatmap_stride);
      detail::read_if(m, "middle_channels", c.model.middle_channels);
    }
    if (j.contains("heatmap")) detail::read_if(j.at("heatmap"), "std", c.heatmap_std);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::read_if(d, "train_root", c.data.train_root);
      detail::read_if(d, "eval_root", c.data.eval_root);
      detail::read_if(d, "list", c.data.list);
      detail::read_if(d, "vp_file", c.data.vp_file);
      detail::read_if(d, "categories", c.data.categories);
      detail::read_if(d, "seg_stroke_width", c.data.seg_stroke_width);
      detail::read_if(d, "val_fraction", c.data.val_fraction);
    }
    if (j.contains("generate")) {
      const auto& g = j.at("generate");
      detail::read_if(g, "count", c.generate.count);
      detail::read_if(g, "width", c.generate.dims.width);
      detail::read_if(g, "height", c.generate.dims.height);
      detail::read_if(g, "min_lanes", c.generate.min_lanes);
      detail::read_if(g, "max_lanes", c.generate.max_lanes);
      detail::read_if(g, "curvature_max", c.generate.curvature_max);
      detail::read_if(g, "noise_std", c.generate.noise_std);
      detail::read_if(g, "stroke_width", c.generate.stroke_width);
      detail::read_if(g, "seed", c.generate.seed);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::read_if(t, "epochs", c.train.epochs);
      detail::read_if(t, "batch_size", c.train.batch_size);
      detail::read_if(t, "lr0", c.train.lr0);
      detail::read_if(t, "decay_factor", c.train.decay_factor);
      detail::read_if(t, "decay_every", c.train.decay_every);
      detail::read_if(t, "momentum", c.train.momentum);
      if (t.contains("weights")) {
        detail::read_if(t.at("weights"), "lambda_vp", c.train.weights.lambda_vp);
        detail::read_if(t.at("weights"), "lambda_lane", c.train.weights.lambda_lane);
      }
      if (t.contains("augment")) {
        detail::read_if(t.at("augment"), "flip", c.train.augment.flip);
        detail::read_if(t.at("augment"), "rotation", c.train.augment.rotation);
        detail::read_if(t.at("augment"), "rotation_cap", c.train.augment.rotation_cap);
      }
      detail::read_if(t, "seed", c.train.seed);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      detail::read_if(e, "line_width", c.eval.line_width);
      detail::read_if(e, "iou_threshold", c.eval.iou_threshold);
      detail::read_if(e, "exist_threshold", c.eval.exist_threshold);
      detail::read_if(e, "point_threshold", c.eval.point_threshold);
      detail::read_if(e, "row_anchors", c.eval.row_anchors);
      detail::read_if(e, "checkpoint", c.eval.checkpoint);
    }
    if (j.contains("predict")) {
      detail::read_if(j.at("predict"), "count", c.predict.count);
      detail::read_if(j.at("predict"), "checkpoint", c.predict.checkpoint);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_run_config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, std::string("invalid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

// `--set a.b.c=value` override; the value is parsed as JSON when possible so
// numbers and booleans keep their types, otherwise taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }

  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline std::string config_digest(const RunConfig& c) { return fnv1a64_hex(to_json(c).dump()); }

}  // namespace vplane
