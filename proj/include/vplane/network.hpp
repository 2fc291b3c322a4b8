#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vplane/common.hpp"
#include "vplane/nn.hpp"
#include "vplane/rng.hpp"
#include "vplane/tensor.hpp"

namespace vplane {

enum class FusionTopology { LD_VP, VP_MID_LD, PARALLEL, LD_MID_VP };

inline const char* to_string(FusionTopology t) {
  switch (t) {
    case FusionTopology::LD_VP: return "LD_VP";
    case FusionTopology::VP_MID_LD: return "VP_MID_LD";
    case FusionTopology::PARALLEL: return "PARALLEL";
    case FusionTopology::LD_MID_VP: return "LD_MID_VP";
  }
  throw std::logic_error("unreachable topology");
}

inline FusionTopology parse_topology(const std::string& s) {
  if (s == "LD_VP") return FusionTopology::LD_VP;
  if (s == "VP_MID_LD") return FusionTopology::VP_MID_LD;
  if (s == "PARALLEL") return FusionTopology::PARALLEL;
  if (s == "LD_MID_VP") return FusionTopology::LD_MID_VP;
  throw std::invalid_argument("unknown topology '" + s +
                              "' (expected LD_VP, VP_MID_LD, PARALLEL or LD_MID_VP)");
}

constexpr FusionTopology kAllTopologies[] = {FusionTopology::LD_VP, FusionTopology::VP_MID_LD,
                                             FusionTopology::PARALLEL, FusionTopology::LD_MID_VP};

struct ModelConfig {
  FusionTopology topology = FusionTopology::LD_MID_VP;
  ImageDims input_dims{128, 64};
  int lane_categories = 4;  // K; the segmentation head emits K+1 channels
  int base_channels = 16;
  int encoder_depth = 2;  // residual blocks per encoder stage
  int heatmap_stride = 4;
  int middle_channels = 16;  // middle/VP-head working width
};

inline void require_valid(const ModelConfig& cfg) {
  require_valid(cfg.input_dims, "model config");
  if (cfg.input_dims.width % 8 != 0 || cfg.input_dims.height % 8 != 0) {
    throw std::invalid_argument("model config: input dims " + std::to_string(cfg.input_dims.width) +
                                "x" + std::to_string(cfg.input_dims.height) +
                                " must be divisible by 8");
  }
  if (cfg.heatmap_stride < 1 || cfg.input_dims.width % cfg.heatmap_stride != 0 ||
      cfg.input_dims.height % cfg.heatmap_stride != 0) {
    throw std::invalid_argument("model config: input dims must be divisible by heatmap_stride");
  }
  if (cfg.base_channels < 4) throw std::invalid_argument("model config: base_channels must be >= 4");
  if (cfg.lane_categories < 1) throw std::invalid_argument("model config: lane_categories must be >= 1");
  if (cfg.encoder_depth < 0) throw std::invalid_argument("model config: encoder_depth must be >= 0");
  if (cfg.middle_channels < 1) throw std::invalid_argument("model config: middle_channels must be >= 1");
}

template <typename T>
struct ForwardOutput {
  Tensor4<T> seg_logits;  // N x (K+1) x H x W
  Tensor4<T> vp_heatmap;  // N x 1 x H/stride x W/stride
};

// Shared encoder, lane decoder, VP head and optional middle block, wired per
// topology. Forward and backward are spelled out by hand; the backward pass
// must be preceded by a forward pass on the same batch.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    require_valid(cfg);
    const int b = cfg.base_channels;
    const int kp1 = cfg.lane_categories + 1;
    const int h = cfg.input_dims.height, w = cfg.input_dims.width;
    const int m = cfg.middle_channels;

    ds1_ = std::make_unique<nn::Downsampler<T>>(3, b);
    ds2_ = std::make_unique<nn::Downsampler<T>>(b, 2 * b);
    ds3_ = std::make_unique<nn::Downsampler<T>>(2 * b, 4 * b);
    for (int i = 0; i < cfg.encoder_depth; ++i) {
      enc1_.emplace_back(b, 1);
      enc2_.emplace_back(2 * b, 1);
      enc3_.emplace_back(4 * b, 2);
    }

    // In VP_MID_LD the decoder reads the middle block's output, everywhere
    // else the raw encoder features.
    const int dec_in = cfg.topology == FusionTopology::VP_MID_LD ? m : 4 * b;
    dec_up4_ = std::make_unique<nn::Resize<T>>(h / 4, w / 4);
    dec_conv1_ = std::make_unique<nn::Conv2d<T>>(dec_in, 2 * b, 3, 3, 1, 1, 1);
    dec_nb1_ = std::make_unique<nn::NonBottleneck1d<T>>(2 * b, 1);
    dec_up2_ = std::make_unique<nn::Resize<T>>(h / 2, w / 2);
    dec_conv2_ = std::make_unique<nn::Conv2d<T>>(2 * b, b, 3, 3, 1, 1, 1);
    dec_nb2_ = std::make_unique<nn::NonBottleneck1d<T>>(b, 1);
    dec_up1_ = std::make_unique<nn::Resize<T>>(h, w);
    dec_conv3_ = std::make_unique<nn::Conv2d<T>>(b, kp1, 3, 3, 1, 1, 1);

    int vp_in = 4 * b;
    switch (cfg.topology) {
      case FusionTopology::PARALLEL:
        break;
      case FusionTopology::LD_VP:
        vp_in = 4 * b + kp1;
        fuse_resize_ = std::make_unique<nn::Resize<T>>(h / 8, w / 8);
        break;
      case FusionTopology::LD_MID_VP:
        fuse_resize_ = std::make_unique<nn::Resize<T>>(h / 8, w / 8);
        mid_proj_ = std::make_unique<nn::Conv2d<T>>(4 * b + kp1, m, 1, 1, 1, 0, 0);
        mid_nb_ = std::make_unique<nn::NonBottleneck1d<T>>(m, 1);
        vp_in = m;
        break;
      case FusionTopology::VP_MID_LD:
        fuse_resize_ = std::make_unique<nn::Resize<T>>(h / 8, w / 8);
        mid_proj_ = std::make_unique<nn::Conv2d<T>>(4 * b + 1, m, 1, 1, 1, 0, 0);
        mid_nb_ = std::make_unique<nn::NonBottleneck1d<T>>(m, 1);
        break;
    }
    vp_resize_ = std::make_unique<nn::Resize<T>>(h / cfg.heatmap_stride, w / cfg.heatmap_stride);
    vp_conv1_ = std::make_unique<nn::Conv2d<T>>(vp_in, m, 3, 3, 1, 1, 1);
    vp_conv2_ = std::make_unique<nn::Conv2d<T>>(m, 1, 1, 1, 1, 0, 0);

    Rng rng(derive_seed(seed, 0xA11, 0));
    ds1_->init(rng);
    for (auto& nb : enc1_) nb.init(rng);
    ds2_->init(rng);
    for (auto& nb : enc2_) nb.init(rng);
    ds3_->init(rng);
    for (auto& nb : enc3_) nb.init(rng);
    dec_conv1_->init(rng);
    dec_nb1_->init(rng);
    dec_conv2_->init(rng);
    dec_nb2_->init(rng);
    dec_conv3_->init(rng, 0.1);
    if (mid_proj_) {
      mid_proj_->init(rng);
      mid_nb_->init(rng);
    }
    vp_conv1_->init(rng);
    vp_conv2_->init(rng, 0.01);

    ds1_->collect(params_, "encoder.ds1");
    for (std::size_t i = 0; i < enc1_.size(); ++i) enc1_[i].collect(params_, "encoder.nb1." + std::to_string(i));
    ds2_->collect(params_, "encoder.ds2");
    for (std::size_t i = 0; i < enc2_.size(); ++i) enc2_[i].collect(params_, "encoder.nb2." + std::to_string(i));
    ds3_->collect(params_, "encoder.ds3");
    for (std::size_t i = 0; i < enc3_.size(); ++i) enc3_[i].collect(params_, "encoder.nb3." + std::to_string(i));
    dec_conv1_->collect(params_, "decoder.conv1");
    dec_nb1_->collect(params_, "decoder.nb1");
    dec_conv2_->collect(params_, "decoder.conv2");
    dec_nb2_->collect(params_, "decoder.nb2");
    dec_conv3_->collect(params_, "decoder.conv3");
    if (mid_proj_) {
      mid_proj_->collect(params_, "middle.proj");
      mid_nb_->collect(params_, "middle.nb");
    }
    vp_conv1_->collect(params_, "vp_head.conv1");
    vp_conv2_->collect(params_, "vp_head.conv2");
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<ParamView<T>>& params() { return params_; }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad->begin(), p.grad->end(), T(0));
  }

  ForwardOutput<T> forward(const Tensor4<T>& x) {
    if (x.c != 3 || x.h != cfg_.input_dims.height || x.w != cfg_.input_dims.width || x.n < 1) {
      throw std::invalid_argument(
          "model forward: expected (N,3," + std::to_string(cfg_.input_dims.height) + "," +
          std::to_string(cfg_.input_dims.width) + ") with N >= 1, got " + x.shape_str());
    }
    Tensor4<T> enc = ds1_->forward(x);
    for (auto& nb : enc1_) enc = nb.forward(enc);
    enc = ds2_->forward(enc);
    for (auto& nb : enc2_) enc = nb.forward(enc);
    enc = ds3_->forward(enc);
    for (auto& nb : enc3_) enc = nb.forward(enc);

    ForwardOutput<T> out;
    switch (cfg_.topology) {
      case FusionTopology::PARALLEL: {
        out.seg_logits = decode(enc);
        out.vp_heatmap = vp_head(enc);
        break;
      }
      case FusionTopology::LD_VP: {
        out.seg_logits = decode(enc);
        const Tensor4<T> p8 = fuse_resize_->forward(softmax_.forward(out.seg_logits));
        out.vp_heatmap = vp_head(nn::concat_channels(enc, p8));
        break;
      }
      case FusionTopology::LD_MID_VP: {
        out.seg_logits = decode(enc);
        const Tensor4<T> p8 = fuse_resize_->forward(softmax_.forward(out.seg_logits));
        out.vp_heatmap = vp_head(middle(nn::concat_channels(enc, p8)));
        break;
      }
      case FusionTopology::VP_MID_LD: {
        out.vp_heatmap = vp_head(enc);
        const Tensor4<T> v8 = fuse_resize_->forward(out.vp_heatmap);
        out.seg_logits = decode(middle(nn::concat_channels(enc, v8)));
        break;
      }
    }
    return out;
  }

  // Accumulates parameter gradients for d(loss)/d(seg_logits) and
  // d(loss)/d(vp_heatmap); pass a zero tensor to isolate one loss.
  void backward(const Tensor4<T>& dseg, const Tensor4<T>& dvp) {
    Tensor4<T> denc;
    switch (cfg_.topology) {
      case FusionTopology::PARALLEL: {
        denc = decode_backward(dseg);
        accumulate(denc, vp_head_backward(dvp));
        break;
      }
      case FusionTopology::LD_VP: {
        Tensor4<T> dfused = vp_head_backward(dvp);
        Tensor4<T> denc_vp, dp8;
        nn::split_channels(dfused, denc_vp, dp8, 4 * cfg_.base_channels, cfg_.lane_categories + 1);
        Tensor4<T> dseg_total = softmax_.backward(fuse_resize_->backward(dp8));
        accumulate(dseg_total, dseg);
        denc = decode_backward(dseg_total);
        accumulate(denc, denc_vp);
        break;
      }
      case FusionTopology::LD_MID_VP: {
        Tensor4<T> dfused = middle_backward(vp_head_backward(dvp));
        Tensor4<T> denc_vp, dp8;
        nn::split_channels(dfused, denc_vp, dp8, 4 * cfg_.base_channels, cfg_.lane_categories + 1);
        Tensor4<T> dseg_total = softmax_.backward(fuse_resize_->backward(dp8));
        accumulate(dseg_total, dseg);
        denc = decode_backward(dseg_total);
        accumulate(denc, denc_vp);
        break;
      }
      case FusionTopology::VP_MID_LD: {
        Tensor4<T> dfused = middle_backward(decode_backward(dseg));
        Tensor4<T> denc_seg, dv8;
        nn::split_channels(dfused, denc_seg, dv8, 4 * cfg_.base_channels, 1);
        Tensor4<T> dvp_total = fuse_resize_->backward(dv8);
        accumulate(dvp_total, dvp);
        denc = vp_head_backward(dvp_total);
        accumulate(denc, denc_seg);
        break;
      }
    }
    for (auto it = enc3_.rbegin(); it != enc3_.rend(); ++it) denc = it->backward(denc);
    denc = ds3_->backward(denc);
    for (auto it = enc2_.rbegin(); it != enc2_.rend(); ++it) denc = it->backward(denc);
    denc = ds2_->backward(denc);
    for (auto it = enc1_.rbegin(); it != enc1_.rend(); ++it) denc = it->backward(denc);
    ds1_->backward(denc);
  }

  std::map<std::string, std::size_t> count_parameters() const {
    std::map<std::string, std::size_t> counts{
        {"encoder", 0}, {"lane_decoder", 0}, {"middle", 0}, {"vp_head", 0}};
    std::size_t total = 0;
    for (const auto& p : params_) {
      const std::string comp = p.name.substr(0, p.name.find('.'));
      const std::string key = comp == "decoder" ? "lane_decoder" : comp;
      counts[key] += p.value->size();
      total += p.value->size();
    }
    counts["total"] = total;
    return counts;
  }

 private:
  Tensor4<T> decode(const Tensor4<T>& f) {
    Tensor4<T> t = dec_relu1_.forward(dec_conv1_->forward(dec_up4_->forward(f)));
    t = dec_nb1_->forward(t);
    t = dec_relu2_.forward(dec_conv2_->forward(dec_up2_->forward(t)));
    t = dec_nb2_->forward(t);
    return dec_conv3_->forward(dec_up1_->forward(t));
  }

  Tensor4<T> decode_backward(const Tensor4<T>& d) {
    Tensor4<T> t = dec_up1_->backward(dec_conv3_->backward(d));
    t = dec_nb2_->backward(t);
    t = dec_up2_->backward(dec_conv2_->backward(dec_relu2_.backward(t)));
    t = dec_nb1_->backward(t);
    return dec_up4_->backward(dec_conv1_->backward(dec_relu1_.backward(t)));
  }

  Tensor4<T> middle(const Tensor4<T>& f) { return mid_nb_->forward(mid_proj_->forward(f)); }
  Tensor4<T> middle_backward(const Tensor4<T>& d) {
    return mid_proj_->backward(mid_nb_->backward(d));
  }

  Tensor4<T> vp_head(const Tensor4<T>& f) {
    return vp_conv2_->forward(vp_relu_.forward(vp_conv1_->forward(vp_resize_->forward(f))));
  }
  Tensor4<T> vp_head_backward(const Tensor4<T>& d) {
    return vp_resize_->backward(vp_conv1_->backward(vp_relu_.backward(vp_conv2_->backward(d))));
  }

  static void accumulate(Tensor4<T>& into, const Tensor4<T>& from) {
    for (std::size_t i = 0; i < into.v.size(); ++i) into.v[i] += from.v[i];
  }

  ModelConfig cfg_;
  std::unique_ptr<nn::Downsampler<T>> ds1_, ds2_, ds3_;
  std::vector<nn::NonBottleneck1d<T>> enc1_, enc2_, enc3_;
  std::unique_ptr<nn::Resize<T>> dec_up4_, dec_up2_, dec_up1_;
  std::unique_ptr<nn::Conv2d<T>> dec_conv1_, dec_conv2_, dec_conv3_;
  std::unique_ptr<nn::NonBottleneck1d<T>> dec_nb1_, dec_nb2_;
  nn::ReLU<T> dec_relu1_, dec_relu2_;
  std::unique_ptr<nn::Resize<T>> fuse_resize_;
  nn::SoftmaxC<T> softmax_;
  std::unique_ptr<nn::Conv2d<T>> mid_proj_;
  std::unique_ptr<nn::NonBottleneck1d<T>> mid_nb_;
  std::unique_ptr<nn::Resize<T>> vp_resize_;
  std::unique_ptr<nn::Conv2d<T>> vp_conv1_, vp_conv2_;
  nn::ReLU<T> vp_relu_;
  std::vector<ParamView<T>> params_;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<T>(cfg, seed);
}

}  // namespace vplane
