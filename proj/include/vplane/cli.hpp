#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vplane/checkpoint.hpp"
#include "vplane/config.hpp"
#include "vplane/dataset.hpp"
#include "vplane/eval.hpp"
#include "vplane/network.hpp"
#include "vplane/training.hpp"
#include "vplane/version.hpp"

namespace vplane {
namespace cli {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
};

// Precedence: --seed and --set beat the file, the file beats the defaults.
inline RunConfig resolve_config(const CommonArgs& a) {
  nlohmann::json j = nlohmann::json::object();
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw IoError("cannot open config " + a.config_path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(a.config_path, 0, std::string("invalid JSON: ") + e.what());
    }
  }
  for (const std::string& s : a.overrides) apply_override(j, s);
  RunConfig cfg = run_config_from_json(j);
  if (a.seed_set) {
    cfg.generate.seed = a.seed;
    cfg.train.seed = a.seed;
  }
  return cfg;
}

inline void write_run_info(const std::filesystem::path& out_dir, const std::string& verb,
                           const RunConfig& cfg, std::uint64_t seed) {
  const nlohmann::json j{{"verb", verb},
                         {"config_digest", config_digest(cfg)},
                         {"seed", seed},
                         {"version", kVersion}};
  atomic_write(out_dir / "run_info.json", j.dump(2) + "\n");
}

namespace detail {

inline std::string format4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string scene_name(int i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "images/scene_%05d.ppm", i);
  return buf;
}

inline Manifest load_manifest_from(const std::string& root, const DataConfig& d,
                                   const char* which) {
  if (root.empty()) {
    throw std::invalid_argument(std::string("data.") + which + " is not set");
  }
  return load_manifest(root, d.list, d.vp_file, d.categories);
}

}  // namespace detail

inline int run_generate(const CommonArgs& a) {
  const RunConfig cfg = resolve_config(a);
  const GenerateConfig& g = cfg.generate;
  if (g.count < 1) throw std::invalid_argument("generate.count must be >= 1");
  if (g.min_lanes < 2 || g.max_lanes < g.min_lanes) {
    throw std::invalid_argument("generate: need 2 <= min_lanes <= max_lanes");
  }
  if (g.curvature_max < 0.0) throw std::invalid_argument("generate.curvature_max must be >= 0");

  const std::filesystem::path root = a.out_dir;
  std::filesystem::create_directories(root / "images");

  std::string list, vps, cats;
  for (int i = 0; i < g.count; ++i) {
    const std::uint64_t scene_seed = derive_seed(g.seed, 0x5CE, static_cast<std::uint64_t>(i));
    Rng ctl(derive_seed(scene_seed, 0xC71, 0));
    SceneConfig sc;
    sc.dims = g.dims;
    sc.num_lanes = g.min_lanes + static_cast<int>(ctl.below(
                                     static_cast<std::uint64_t>(g.max_lanes - g.min_lanes + 1)));
    sc.curvature = g.curvature_max * ctl.uniform();
    sc.noise_std = g.noise_std;
    sc.seed = scene_seed;
    sc.stroke_width = g.stroke_width;
    const SyntheticScene scene = generate_synthetic_scene(sc, g.max_lanes);

    const std::string name = detail::scene_name(i);
    write_ppm(root / name, scene.sample.image);

    std::string lines;
    for (const Lane& lane : scene.sample.lanes) {
      for (std::size_t p = 0; p < lane.points.size(); ++p) {
        if (p) lines += " ";
        lines += detail::format4(lane.points[p].x) + " " + detail::format4(lane.points[p].y);
      }
      lines += "\n";
    }
    atomic_write(lanes_path_for(root / name), lines);

    list += name + "\n";
    vps += name + " " + detail::format4(scene.sample.vp.point.x) + " " +
           detail::format4(scene.sample.vp.point.y) + " 1\n";
    cats += name + " " + to_string(scene.sample.category) + "\n";
  }
  atomic_write(root / cfg.data.list, list);
  atomic_write(root / cfg.data.vp_file, vps);
  atomic_write(root / cfg.data.categories, cats);
  write_run_info(root, "generate", cfg, g.seed);
  std::cout << "generated " << g.count << " scenes at " << g.dims.width << "x" << g.dims.height
            << " into " << root.string() << "\n";
  return 0;
}

inline int run_train(const CommonArgs& a) {
  const RunConfig cfg = resolve_config(a);
  require_valid(cfg.model);
  const Manifest m = detail::load_manifest_from(cfg.data.train_root, cfg.data, "train_root");
  const std::vector<TrainItem> items =
      load_training_items(m, cfg.data.seg_stroke_width, cfg.model.lane_categories);

  Model<float> model = build_model<float>(cfg.model, cfg.train.seed);
  const std::filesystem::path out = a.out_dir;
  std::filesystem::create_directories(out);
  const TrainOutcome outcome = train_model(model, items, cfg, TrainOptions{out, a.workers});
  write_run_info(out, "train", cfg, cfg.train.seed);

  std::cout << "trained " << to_string(cfg.model.topology) << " for " << cfg.train.epochs
            << " epochs on " << items.size() << " samples; final step loss "
            << outcome.records.back().total << ", best val " << outcome.best_val << " at epoch "
            << outcome.best_epoch << "\n";
  return 0;
}

namespace detail {

template <typename T>
EvalReport evaluate_checkpointed(Model<T>& model, RunConfig cfg) {
  cfg.model = model.config();  // the checkpoint owns the architecture
  const Manifest m = load_manifest_from(cfg.data.eval_root, cfg.data, "eval_root");
  return run_evaluation(model, m, cfg);
}

}  // namespace detail

inline int run_eval(const CommonArgs& a) {
  const RunConfig cfg = resolve_config(a);
  if (cfg.eval.checkpoint.empty()) throw std::invalid_argument("eval.checkpoint is not set");
  Model<float> model = load_checkpoint<float>(cfg.eval.checkpoint);
  const EvalReport report = detail::evaluate_checkpointed(model, cfg);

  const std::filesystem::path out = a.out_dir;
  std::filesystem::create_directories(out);
  atomic_write(out / "report.txt", render_report_text(report));
  atomic_write(out / "report.json", report_to_json(report).dump(2) + "\n");
  atomic_write(out / "vp_histogram.txt", render_histogram_text(report.vp_histogram));
  write_run_info(out, "eval", cfg, cfg.train.seed);

  std::cout << "evaluated " << cfg.eval.checkpoint << ": Total f1 "
            << detail::format4(report.total.f1) << ", mean NormDist "
            << detail::format4(report.vp_histogram.mean) << ", report in " << out.string() << "\n";
  return 0;
}

inline int run_ablate(const CommonArgs& a) {
  const RunConfig base = resolve_config(a);
  require_valid(base.model);
  const Manifest train_m =
      detail::load_manifest_from(base.data.train_root, base.data, "train_root");
  const std::vector<TrainItem> items =
      load_training_items(train_m, base.data.seg_stroke_width, base.model.lane_categories);

  struct Row {
    std::string topology;
    EvalReport report;
    std::map<std::string, std::size_t> params;
  };
  std::vector<Row> rows;
  const std::filesystem::path out = a.out_dir;
  for (FusionTopology t : kAllTopologies) {
    RunConfig cfg = base;
    cfg.model.topology = t;
    const std::filesystem::path tdir = out / to_string(t);
    std::filesystem::create_directories(tdir);

    Model<float> model = build_model<float>(cfg.model, cfg.train.seed);
    const TrainOutcome outcome = train_model(model, items, cfg, TrainOptions{tdir, a.workers});
    Model<float> best = load_checkpoint<float>(outcome.best_checkpoint);
    const EvalReport report = detail::evaluate_checkpointed(best, cfg);
    rows.push_back(Row{to_string(t), report, best.count_parameters()});
    std::cout << to_string(t) << ": Total f1 " << detail::format4(report.total.f1)
              << ", mean NormDist " << detail::format4(report.vp_histogram.mean) << "\n";
  }

  // Column set: every category seen anywhere, then Total and the extras.
  std::vector<std::string> cat_names;
  for (const Row& r : rows) {
    for (const CategoryReport& c : r.report.categories) {
      const std::string n = to_string(c.category);
      if (std::find(cat_names.begin(), cat_names.end(), n) == cat_names.end()) {
        cat_names.push_back(n);
      }
    }
  }

  using ::vplane::detail::pad_left;
  using ::vplane::detail::pad_right;
  std::string text = pad_right("topology", 12);
  for (const std::string& n : cat_names) text += pad_left(n, 12);
  text += pad_left("Total", 12) + pad_left("mean_nd", 10) + pad_left("params", 10);
  text += "\n";
  nlohmann::json rows_json = nlohmann::json::array();
  for (const Row& r : rows) {
    text += pad_right(r.topology, 12);
    nlohmann::json cats_json;
    for (const std::string& n : cat_names) {
      std::string cell = "-";
      for (const CategoryReport& c : r.report.categories) {
        if (to_string(c.category) == n) {
          cell = c.fp_only ? "fp=" + std::to_string(c.fp) : detail::format4(c.f1);
          cats_json[n] = c.fp_only ? nlohmann::json(c.fp) : nlohmann::json(c.f1);
        }
      }
      text += pad_left(cell, 12);
    }
    text += pad_left(detail::format4(r.report.total.f1), 12);
    text += pad_left(detail::format4(r.report.vp_histogram.mean), 10);
    text += pad_left(std::to_string(r.params.at("total")), 10);
    text += "\n";
    rows_json.push_back(nlohmann::json{{"topology", r.topology},
                                       {"categories", cats_json},
                                       {"total_f1", r.report.total.f1},
                                       {"mean_norm_dist", r.report.vp_histogram.mean},
                                       {"params", r.params}});
  }
  atomic_write(out / "ablate_report.txt", text);
  atomic_write(out / "ablate_report.json", rows_json.dump(2) + "\n");
  write_run_info(out, "ablate", base, base.train.seed);
  std::cout << "ablation report in " << (out / "ablate_report.txt").string() << "\n";
  return 0;
}

namespace detail {

inline void draw_cross(ImageU8& img, const Point2D& p, int arm, std::uint8_t r, std::uint8_t g,
                       std::uint8_t b) {
  const int cx = static_cast<int>(std::lround(p.x));
  const int cy = static_cast<int>(std::lround(p.y));
  for (int d = -arm; d <= arm; ++d) {
    if (cx + d >= 0 && cx + d < img.dims.width && cy >= 0 && cy < img.dims.height) {
      img.at(cy, cx + d, 0) = r;
      img.at(cy, cx + d, 1) = g;
      img.at(cy, cx + d, 2) = b;
    }
    if (cy + d >= 0 && cy + d < img.dims.height && cx >= 0 && cx < img.dims.width) {
      img.at(cy + d, cx, 0) = r;
      img.at(cy + d, cx, 1) = g;
      img.at(cy + d, cx, 2) = b;
    }
  }
}

inline const std::uint8_t kLaneColors[4][3] = {
    {235, 70, 70}, {70, 210, 100}, {80, 130, 235}, {235, 205, 60}};

}  // namespace detail

inline int run_predict(const CommonArgs& a) {
  const RunConfig cfg0 = resolve_config(a);
  if (cfg0.predict.checkpoint.empty()) throw std::invalid_argument("predict.checkpoint is not set");
  Model<float> model = load_checkpoint<float>(cfg0.predict.checkpoint);
  RunConfig cfg = cfg0;
  cfg.model = model.config();
  const Manifest m = detail::load_manifest_from(cfg.data.eval_root, cfg.data, "eval_root");

  const ImageDims md = cfg.model.input_dims;
  nn::SoftmaxC<float> softmax;
  const std::filesystem::path out = a.out_dir;
  std::filesystem::create_directories(out);

  const int count = std::min<int>(cfg.predict.count, static_cast<int>(m.entries.size()));
  for (int i = 0; i < count; ++i) {
    const Sample s = load_sample(m, static_cast<std::size_t>(i));
    const ImageDims native = s.dims;
    const ImageU8 resized = resize_bilinear(s.image, md);
    Tensor4<float> x(1, 3, md.height, md.width);
    for (int r = 0; r < md.height; ++r) {
      for (int c = 0; c < md.width; ++c) {
        for (int ch = 0; ch < 3; ++ch) x.at(0, ch, r, c) = resized.at(r, c, ch) / 255.0f;
      }
    }
    const ForwardOutput<float> fw = model.forward(x);
    const Tensor4<float> probs = softmax.forward(fw.seg_logits);

    // Lane classes blended over the native image, nearest-neighbor upscale.
    ImageU8 overlay = s.image;
    for (int r = 0; r < native.height; ++r) {
      const int mr = std::min(md.height - 1, static_cast<int>((r + 0.5) * md.height / native.height));
      for (int c = 0; c < native.width; ++c) {
        const int mc = std::min(md.width - 1, static_cast<int>((c + 0.5) * md.width / native.width));
        int best = 0;
        for (int k = 1; k < probs.c; ++k) {
          if (probs.at(0, k, mr, mc) > probs.at(0, best, mr, mc)) best = k;
        }
        if (best == 0) continue;
        const std::uint8_t* col = detail::kLaneColors[(best - 1) % 4];
        for (int ch = 0; ch < 3; ++ch) {
          overlay.at(r, c, ch) = clamp_u8(0.45 * overlay.at(r, c, ch) + 0.55 * col[ch]);
        }
      }
    }
    Heatmap hm(ImageDims{fw.vp_heatmap.w, fw.vp_heatmap.h});
    for (std::size_t k = 0; k < hm.values.size(); ++k) {
      hm.values[k] = static_cast<double>(fw.vp_heatmap.sample(0)[k]);
    }
    const DecodedVP dec = decode_vp(hm, HeatmapConfig{cfg.heatmap_std, cfg.model.heatmap_stride});
    const double sx = static_cast<double>(native.width) / md.width;
    const double sy = static_cast<double>(native.height) / md.height;
    detail::draw_cross(overlay, Point2D{dec.point.x * sx, dec.point.y * sy}, 4, 255, 255, 255);
    if (s.vp.visible) detail::draw_cross(overlay, s.vp.point, 4, 230, 60, 230);

    // Raw heatmap rendered grayscale at input resolution.
    ImageU8 hm_img(md);
    double hmax = 0.0;
    for (double v : hm.values) hmax = std::max(hmax, v);
    for (int r = 0; r < md.height; ++r) {
      for (int c = 0; c < md.width; ++c) {
        const int hr = std::min(hm.dims.height - 1, r / cfg.model.heatmap_stride);
        const int hc = std::min(hm.dims.width - 1, c / cfg.model.heatmap_stride);
        const double v = hmax > 0.0 ? hm.at(hr, hc) / hmax : 0.0;
        for (int ch = 0; ch < 3; ++ch) hm_img.at(r, c, ch) = clamp_u8(255.0 * v);
      }
    }

    char base[64];
    std::snprintf(base, sizeof(base), "predict_%05d", i);
    write_ppm(out / (std::string(base) + ".ppm"), overlay);
    write_ppm(out / (std::string(base) + "_vp.ppm"), hm_img);
  }
  write_run_info(out, "predict", cfg, cfg.train.seed);
  std::cout << "wrote " << count << " overlay pairs into " << out.string() << "\n";
  return 0;
}

inline int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"vanishing-point assisted lane detection workbench"};
  app.name("vplane");
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&common](CLI::App* sub, bool with_workers) {
    sub->add_option("--config", common.config_path, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out_dir, "output directory")->required();
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&common](const std::uint64_t& v) {
          common.seed = v;
          common.seed_set = true;
        },
        "override the generate/train seed");
    sub->add_option("--set", common.overrides,
                    "dotted config override, key.path=value (repeatable)");
    if (with_workers) {
      sub->add_option("--workers", common.workers, "data loading worker threads")
          ->check(CLI::PositiveNumber);
    }
  };

  CLI::App* generate = app.add_subcommand("generate", "write a seeded synthetic scene dataset");
  add_common(generate, false);
  CLI::App* train = app.add_subcommand("train", "train a model, writing checkpoints and logs");
  add_common(train, true);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint against a manifest");
  add_common(eval, false);
  CLI::App* ablate = app.add_subcommand("ablate", "train and compare all four fusion topologies");
  add_common(ablate, true);
  CLI::App* predict = app.add_subcommand("predict", "render lane and heatmap overlays");
  add_common(predict, false);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (generate->parsed()) return run_generate(common);
    if (train->parsed()) return run_train(common);
    if (eval->parsed()) return run_eval(common);
    if (ablate->parsed()) return run_ablate(common);
    if (predict->parsed()) return run_predict(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;  // unreachable with require_subcommand(1)
}

}  // namespace cli
}  // namespace vplane
