#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vplane/checkpoint.hpp"
#include "vplane/config.hpp"
#include "vplane/dataset.hpp"
#include "vplane/loss.hpp"
#include "vplane/network.hpp"
#include "vplane/rng.hpp"

namespace vplane {

struct TrainLogRecord {
  int epoch = 0;
  int step = 0;  // global optimizer step, counted across epochs
  double lr = 0.0;
  double l_vp = 0.0;
  double l_lane = 0.0;
  double total = 0.0;
  double wall_time = 0.0;  // seconds since training start; informational only
};

// Staircase schedule; integer division floors for epoch >= 0. Repeated
// multiplication instead of pow keeps the value identical across libm builds.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw std::invalid_argument("lr_at_epoch: epoch must be >= 0");
  double factor = 1.0;
  for (int i = 0; i < epoch / cfg.decay_every; ++i) factor *= cfg.decay_factor;
  return cfg.lr0 * factor;
}

// Classical momentum: v <- momentum*v - lr*grad; p <- p + v.
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(const std::vector<ParamView<T>>& params, double momentum) : momentum_(momentum) {
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.value->size(), T(0));
  }

  void step(std::vector<ParamView<T>>& params, double lr) {
    if (params.size() != velocity_.size()) {
      throw std::logic_error("sgd: parameter list changed since construction");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::vector<T>& v = velocity_[i];
      std::vector<T>& p = *params[i].value;
      const std::vector<T>& g = *params[i].grad;
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = static_cast<T>(momentum_ * v[k] - lr * g[k]);
        p[k] += v[k];
      }
    }
  }

 private:
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

// One dataset record held in memory at its native resolution; augmentation
// and the resize to model resolution happen per epoch on a copy.
struct TrainItem {
  Sample sample;
  SegTarget target;
};

inline std::vector<TrainItem> load_training_items(const Manifest& m, int stroke_width,
                                                  int max_lanes) {
  std::vector<TrainItem> items;
  items.reserve(m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    TrainItem it;
    it.sample = load_sample(m, i);
    it.target = make_seg_target(it.sample.lanes, it.sample.dims, stroke_width, max_lanes);
    items.push_back(std::move(it));
  }
  return items;
}

template <typename T>
struct TrainBatch {
  Tensor4<T> images;  // N x 3 x H x W in [0, 1]
  BatchTargets<T> targets;
};

// Pure function of (items, indices, config, epoch): the same batch comes out
// no matter which worker assembles it or what ran before.
template <typename T>
TrainBatch<T> assemble_batch(const std::vector<TrainItem>& items,
                             const std::vector<std::size_t>& indices, const RunConfig& cfg,
                             int epoch, bool augment) {
  const ImageDims md = cfg.model.input_dims;
  const HeatmapConfig hc{cfg.heatmap_std, cfg.model.heatmap_stride};
  const ImageDims hd = heatmap_dims(md, hc);
  const int n = static_cast<int>(indices.size());

  TrainBatch<T> b;
  b.images = Tensor4<T>(n, 3, md.height, md.width);
  b.targets.vp_heatmaps = Tensor4<T>(n, 1, hd.height, hd.width);
  b.targets.vp_visible.assign(indices.size(), 0);
  b.targets.seg.reserve(indices.size());

  for (int i = 0; i < n; ++i) {
    const std::size_t idx = indices[i];
    Sample s = items.at(idx).sample;
    SegTarget tgt = items.at(idx).target;

    if (augment) {
      // Both draws always happen so toggling one augmentation never changes
      // the other's stream.
      Rng rng(derive_seed(cfg.train.seed, 0xA060000ULL + static_cast<std::uint64_t>(epoch),
                          static_cast<std::uint64_t>(idx)));
      const double u_flip = rng.uniform();
      const double u_angle = rng.uniform();
      const bool flip = cfg.train.augment.flip && u_flip < 0.5;
      const double cap = cfg.train.augment.rotation_cap;
      const double angle = cfg.train.augment.rotation ? (2.0 * u_angle - 1.0) * cap : 0.0;
      augment_sample(s, tgt, flip, angle, cap);
    }
    resize_sample(s, tgt, md);

    for (int r = 0; r < md.height; ++r) {
      for (int c = 0; c < md.width; ++c) {
        for (int ch = 0; ch < 3; ++ch) {
          b.images.at(i, ch, r, c) = static_cast<T>(s.image.at(r, c, ch) / 255.0);
        }
      }
    }
    if (s.vp.visible && contains(md, s.vp.point)) {
      const Heatmap hm = encode_vp(s.vp, md, hc);
      T* dst = b.targets.vp_heatmaps.sample(i);
      for (std::size_t k = 0; k < hm.values.size(); ++k) dst[k] = static_cast<T>(hm.values[k]);
      b.targets.vp_visible[i] = 1;
    }
    b.targets.seg.push_back(std::move(tgt));
  }
  return b;
}

// Ordered prefetch: workers assemble batches round-robin and the consumer
// takes them strictly in order, so worker count changes throughput only.
template <typename T>
class BatchLoader {
 public:
  using AssembleFn = std::function<TrainBatch<T>(const std::vector<std::size_t>&)>;

  BatchLoader(std::vector<std::vector<std::size_t>> batches, AssembleFn fn, int workers)
      : batches_(std::move(batches)), fn_(std::move(fn)) {
    const std::size_t want = static_cast<std::size_t>(workers < 1 ? 1 : workers);
    const std::size_t count = std::min(want, batches_.size());
    if (count <= 1) return;  // inline mode
    slots_.resize(batches_.size());
    done_.assign(batches_.size(), 0);
    window_ = 2 * count;
    for (std::size_t w = 0; w < count; ++w) {
      threads_.emplace_back([this, w, count] {
        for (std::size_t i = w; i < batches_.size(); i += count) {
          {
            std::unique_lock<std::mutex> lk(mu_);
            space_.wait(lk, [&] { return stop_ || i < next_ + window_; });
            if (stop_) return;
          }
          TrainBatch<T> batch = fn_(batches_[i]);
          {
            std::lock_guard<std::mutex> lk(mu_);
            slots_[i] = std::move(batch);
            done_[i] = 1;
          }
          ready_.notify_all();
        }
      });
    }
  }

  ~BatchLoader() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    space_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t batch_count() const { return batches_.size(); }
  const std::vector<std::size_t>& batch_indices(std::size_t i) const { return batches_[i]; }

  TrainBatch<T> next() {
    if (threads_.empty()) return fn_(batches_[next_++]);
    std::unique_lock<std::mutex> lk(mu_);
    const std::size_t i = next_;
    ready_.wait(lk, [&] { return done_[i] != 0; });
    TrainBatch<T> out = std::move(slots_[i]);
    ++next_;
    lk.unlock();
    space_.notify_all();
    return out;
  }

 private:
  std::vector<std::vector<std::size_t>> batches_;
  AssembleFn fn_;
  std::vector<TrainBatch<T>> slots_;
  std::vector<std::uint8_t> done_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable ready_, space_;
  std::size_t next_ = 0;
  std::size_t window_ = 0;
  bool stop_ = false;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Seeded shuffle, first round(fraction*N) held out; at least one sample
// always stays on the training side.
inline SplitIndices split_train_val(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("split_train_val: empty dataset");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("split_train_val: val_fraction must be in [0, 1)");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5114, 0));
  rng.shuffle(order);
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n - 1;
  SplitIndices out;
  out.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return out;
}

inline std::vector<std::vector<std::size_t>> chunk_batches(const std::vector<std::size_t>& order,
                                                           int batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

struct TrainOptions {
  std::filesystem::path out_dir;
  int workers = 1;
};

struct TrainOutcome {
  std::vector<TrainLogRecord> records;
  std::vector<double> val_loss;  // one entry per epoch
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  std::filesystem::path best_checkpoint;
};

inline nlohmann::json to_json(const TrainLogRecord& r) {
  return nlohmann::json{{"epoch", r.epoch},   {"step", r.step},   {"lr", r.lr},
                        {"l_vp", r.l_vp},     {"l_lane", r.l_lane}, {"total", r.total},
                        {"wall_time", r.wall_time}};
}

namespace detail {

inline std::string epoch_checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03d.ckpt", epoch);
  return buf;
}

inline void write_partial_log(const std::filesystem::path& out_dir,
                              const std::vector<TrainLogRecord>& records) {
  std::string log;
  for (const TrainLogRecord& r : records) log += to_json(r).dump() + "\n";
  atomic_write(out_dir / "train_log.jsonl", log);
}

}  // namespace detail

// Full optimization loop: seeded split, per-epoch shuffle, augmentation,
// forward/backward/step, per-epoch checkpoints plus best-by-validation, and
// a step-level structured log written on completion.
template <typename T>
TrainOutcome train_model(Model<T>& model, const std::vector<TrainItem>& items,
                         const RunConfig& cfg, const TrainOptions& opts) {
  require_valid(cfg.train);
  if (items.empty()) throw std::invalid_argument("train_model: no training samples");
  std::filesystem::create_directories(opts.out_dir / "checkpoints");

  const SplitIndices split = split_train_val(items.size(), cfg.data.val_fraction, cfg.train.seed);
  SgdOptimizer<T> opt(model.params(), cfg.train.momentum);
  TrainOutcome outcome;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  int step = 0;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.train, epoch);

    std::vector<std::size_t> order = split.train;
    Rng shuffle_rng(derive_seed(cfg.train.seed, 0xE70C, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss_sum = 0.0;
    std::size_t epoch_samples = 0;
    BatchLoader<T> loader(
        chunk_batches(order, cfg.train.batch_size),
        [&items, &cfg, epoch](const std::vector<std::size_t>& idx) {
          return assemble_batch<T>(items, idx, cfg, epoch, true);
        },
        opts.workers);
    for (std::size_t bi = 0; bi < loader.batch_count(); ++bi) {
      TrainBatch<T> batch = loader.next();
      const ForwardOutput<T> out = model.forward(batch.images);
      const LossBreakdown bd = total_loss(out, batch.targets, cfg.train.weights);
      if (!std::isfinite(bd.total)) {
        const std::filesystem::path diag = opts.out_dir / "diverged.ckpt";
        save_checkpoint(diag, model);
        detail::write_partial_log(opts.out_dir, outcome.records);
        throw std::runtime_error("train_model: non-finite loss at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step) +
                                 "; diagnostic checkpoint written to " + diag.string());
      }
      const LossGrads<T> grads = total_loss_grads(out, batch.targets, cfg.train.weights);
      model.zero_grad();
      model.backward(grads.dseg, grads.dvp);
      opt.step(model.params(), lr);

      outcome.records.push_back(
          TrainLogRecord{epoch, step, lr, bd.l_vp, bd.l_lane, bd.total, elapsed()});
      epoch_loss_sum += bd.total * static_cast<double>(batch.images.n);
      epoch_samples += static_cast<std::size_t>(batch.images.n);
      ++step;
    }

    // Validation total; with no held-out samples the epoch's mean training
    // loss stands in so best-checkpoint selection still has a signal.
    double val = epoch_loss_sum / static_cast<double>(epoch_samples);
    if (!split.val.empty()) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& vb : chunk_batches(split.val, cfg.train.batch_size)) {
        const TrainBatch<T> batch = assemble_batch<T>(items, vb, cfg, epoch, false);
        const ForwardOutput<T> out = model.forward(batch.images);
        const LossBreakdown bd = total_loss(out, batch.targets, cfg.train.weights);
        sum += bd.total * static_cast<double>(batch.images.n);
        count += static_cast<std::size_t>(batch.images.n);
      }
      val = sum / static_cast<double>(count);
    }
    if (!std::isfinite(val)) {
      const std::filesystem::path diag = opts.out_dir / "diverged.ckpt";
      save_checkpoint(diag, model);
      detail::write_partial_log(opts.out_dir, outcome.records);
      throw std::runtime_error("train_model: non-finite validation loss after epoch " +
                               std::to_string(epoch) + "; diagnostic checkpoint written to " +
                               diag.string());
    }
    outcome.val_loss.push_back(val);

    save_checkpoint(opts.out_dir / "checkpoints" / detail::epoch_checkpoint_name(epoch), model);
    if (val < outcome.best_val) {
      outcome.best_val = val;
      outcome.best_epoch = epoch;
      outcome.best_checkpoint = opts.out_dir / "best.ckpt";
      save_checkpoint(outcome.best_checkpoint, model);
    }
  }

  detail::write_partial_log(opts.out_dir, outcome.records);
  std::string val_log;
  for (std::size_t e = 0; e < outcome.val_loss.size(); ++e) {
    val_log += nlohmann::json{{"epoch", static_cast<int>(e)},
                              {"val_total", outcome.val_loss[e]},
                              {"best", static_cast<int>(e) == outcome.best_epoch}}
                   .dump() +
               "\n";
  }
  atomic_write(opts.out_dir / "val_log.jsonl", val_log);
  return outcome;
}

}  // namespace vplane
