#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vplane/rng.hpp"
#include "vplane/tensor.hpp"

namespace vplane {

// Named view over one parameter array and its gradient accumulator; the
// optimizer and the checkpoint writer both walk these in declaration order.
template <typename T>
struct ParamView {
  std::string name;
  std::vector<T>* value;
  std::vector<T>* grad;
};

namespace nn {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Plain convolution, im2col + GEMM. Weight layout: out_ch rows by
// (in_ch*kh*kw) columns, row-major; the im2col row index is
// (ic*kh + ky)*kw + kx so the two agree.
template <typename T>
class Conv2d {
 public:
  Conv2d(int in_ch, int out_ch, int kh, int kw, int stride, int pad_h, int pad_w, int dil_h = 1,
         int dil_w = 1)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        kh_(kh),
        kw_(kw),
        stride_(stride),
        pad_h_(pad_h),
        pad_w_(pad_w),
        dil_h_(dil_h),
        dil_w_(dil_w),
        weight_(static_cast<std::size_t>(out_ch) * in_ch * kh * kw),
        bias_(static_cast<std::size_t>(out_ch)),
        dweight_(weight_.size(), T(0)),
        dbias_(bias_.size(), T(0)) {}

  // scale < 1 shrinks the He-uniform bound; the output heads start small so
  // the unnormalized stack opens training at a sane loss scale.
  void init(Rng& rng, double scale = 1.0) {
    const double fan_in = static_cast<double>(in_ch_) * kh_ * kw_;
    const double bound = scale * std::sqrt(6.0 / fan_in);
    for (T& w : weight_) w = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(bias_.begin(), bias_.end(), T(0));
  }

  int out_h(int h) const { return (h + 2 * pad_h_ - dil_h_ * (kh_ - 1) - 1) / stride_ + 1; }
  int out_w(int w) const { return (w + 2 * pad_w_ - dil_w_ * (kw_ - 1) - 1) / stride_ + 1; }
  int out_channels() const { return out_ch_; }
  int in_channels() const { return in_ch_; }

  Tensor4<T> forward(const Tensor4<T>& x) {
    if (x.c != in_ch_) {
      throw std::invalid_argument("conv: expected " + std::to_string(in_ch_) + " channels, got " +
                                  x.shape_str());
    }
    x_ = x;
    const int oh = out_h(x.h), ow = out_w(x.w);
    Tensor4<T> y(x.n, out_ch_, oh, ow);
    const int rows = in_ch_ * kh_ * kw_;
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    col_.assign(static_cast<std::size_t>(rows) * plane, T(0));
    ConstMatMap<T> wm(weight_.data(), out_ch_, rows);
    for (int s = 0; s < x.n; ++s) {
      im2col(x, s, oh, ow);
      ConstMatMap<T> cm(col_.data(), rows, static_cast<Eigen::Index>(plane));
      MatMap<T> ym(y.sample(s), out_ch_, static_cast<Eigen::Index>(plane));
      ym.noalias() = wm * cm;
      for (int oc = 0; oc < out_ch_; ++oc) ym.row(oc).array() += bias_[oc];
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    const int oh = dy.h, ow = dy.w;
    const int rows = in_ch_ * kh_ * kw_;
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    Tensor4<T> dx(x_.n, in_ch_, x_.h, x_.w);
    ConstMatMap<T> wm(weight_.data(), out_ch_, rows);
    MatMap<T> dwm(dweight_.data(), out_ch_, rows);
    std::vector<T> dcol(static_cast<std::size_t>(rows) * plane);
    // Samples are reduced in index order so gradient accumulation is
    // bit-stable no matter how the surrounding pipeline is threaded.
    for (int s = 0; s < x_.n; ++s) {
      im2col(x_, s, oh, ow);
      ConstMatMap<T> cm(col_.data(), rows, static_cast<Eigen::Index>(plane));
      ConstMatMap<T> dym(dy.sample(s), out_ch_, static_cast<Eigen::Index>(plane));
      dwm.noalias() += dym * cm.transpose();
      for (int oc = 0; oc < out_ch_; ++oc) dbias_[oc] += dym.row(oc).sum();
      MatMap<T> dcm(dcol.data(), rows, static_cast<Eigen::Index>(plane));
      dcm.noalias() = wm.transpose() * dym;
      col2im_add(dcol, dx, s, oh, ow);
    }
    return dx;
  }

  void collect(std::vector<ParamView<T>>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight_, &dweight_});
    out.push_back({prefix + ".bias", &bias_, &dbias_});
  }

 private:
  void im2col(const Tensor4<T>& x, int s, int oh, int ow) {
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    T* col = col_.data();
    for (int ic = 0; ic < in_ch_; ++ic) {
      const T* src = x.sample(s) + static_cast<std::size_t>(ic) * x.plane();
      for (int ky = 0; ky < kh_; ++ky) {
        for (int kx = 0; kx < kw_; ++kx) {
          T* row = col + ((static_cast<std::size_t>(ic) * kh_ + ky) * kw_ + kx) * plane;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_h_ + ky * dil_h_;
            if (iy < 0 || iy >= x.h) {
              std::fill(row + static_cast<std::size_t>(oy) * ow,
                        row + static_cast<std::size_t>(oy + 1) * ow, T(0));
              continue;
            }
            const T* src_row = src + static_cast<std::size_t>(iy) * x.w;
            T* dst_row = row + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_w_ + kx * dil_w_;
              dst_row[ox] = (ix < 0 || ix >= x.w) ? T(0) : src_row[ix];
            }
          }
        }
      }
    }
  }

  void col2im_add(const std::vector<T>& dcol, Tensor4<T>& dx, int s, int oh, int ow) const {
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    for (int ic = 0; ic < in_ch_; ++ic) {
      T* dst = dx.sample(s) + static_cast<std::size_t>(ic) * dx.plane();
      for (int ky = 0; ky < kh_; ++ky) {
        for (int kx = 0; kx < kw_; ++kx) {
          const T* row = dcol.data() + ((static_cast<std::size_t>(ic) * kh_ + ky) * kw_ + kx) * plane;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_h_ + ky * dil_h_;
            if (iy < 0 || iy >= dx.h) continue;
            T* dst_row = dst + static_cast<std::size_t>(iy) * dx.w;
            const T* src_row = row + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_w_ + kx * dil_w_;
              if (ix >= 0 && ix < dx.w) dst_row[ix] += src_row[ox];
            }
          }
        }
      }
    }
  }

  int in_ch_, out_ch_, kh_, kw_, stride_, pad_h_, pad_w_, dil_h_, dil_w_;
  std::vector<T> weight_, bias_, dweight_, dbias_;
  Tensor4<T> x_;
  std::vector<T> col_;
};

template <typename T>
class ReLU {
 public:
  Tensor4<T> forward(const Tensor4<T>& x) {
    x_ = x;
    Tensor4<T> y = x;
    for (T& v : y.v) v = v > T(0) ? v : T(0);
    return y;
  }
  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) {
      if (!(x_.v[i] > T(0))) dx.v[i] = T(0);
    }
    return dx;
  }

 private:
  Tensor4<T> x_;
};

// 2x2 stride-2 max pooling; requires even spatial dims (the encoder only
// pools power-of-two halves).
template <typename T>
class MaxPool2 {
 public:
  Tensor4<T> forward(const Tensor4<T>& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0) {
      throw std::invalid_argument("maxpool: odd spatial dims " + x.shape_str());
    }
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor4<T> y(x.n, x.c, x.h / 2, x.w / 2);
    argmax_.assign(y.size(), 0);
    std::size_t oi = 0;
    for (int s = 0; s < x.n; ++s) {
      for (int ic = 0; ic < x.c; ++ic) {
        for (int oy = 0; oy < y.h; ++oy) {
          for (int ox = 0; ox < y.w; ++ox, ++oi) {
            T best = x.at(s, ic, oy * 2, ox * 2);
            std::uint8_t which = 0;
            for (std::uint8_t k = 1; k < 4; ++k) {
              const T v = x.at(s, ic, oy * 2 + (k >> 1), ox * 2 + (k & 1));
              if (v > best) {
                best = v;
                which = k;
              }
            }
            argmax_[oi] = which;
            y.v[oi] = best;
          }
        }
      }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> dx(dy.n, dy.c, in_h_, in_w_);
    std::size_t oi = 0;
    for (int s = 0; s < dy.n; ++s) {
      for (int ic = 0; ic < dy.c; ++ic) {
        for (int oy = 0; oy < dy.h; ++oy) {
          for (int ox = 0; ox < dy.w; ++ox, ++oi) {
            const std::uint8_t k = argmax_[oi];
            dx.at(s, ic, oy * 2 + (k >> 1), ox * 2 + (k & 1)) += dy.v[oi];
          }
        }
      }
    }
    return dx;
  }

 private:
  int in_h_ = 0, in_w_ = 0;
  std::vector<std::uint8_t> argmax_;
};

// Bilinear resampling to a fixed target resolution, half-pixel convention,
// border-clamped. Linear, so backward is the exact transpose scatter.
template <typename T>
class Resize {
 public:
  Resize(int target_h, int target_w) : th_(target_h), tw_(target_w) {}

  Tensor4<T> forward(const Tensor4<T>& x) {
    src_h_ = x.h;
    src_w_ = x.w;
    build_taps();
    Tensor4<T> y(x.n, x.c, th_, tw_);
    for (int s = 0; s < x.n; ++s) {
      for (int ic = 0; ic < x.c; ++ic) {
        const T* src = x.sample(s) + static_cast<std::size_t>(ic) * x.plane();
        T* dst = y.sample(s) + static_cast<std::size_t>(ic) * y.plane();
        for (int r = 0; r < th_; ++r) {
          const Tap& ty = taps_y_[r];
          for (int c = 0; c < tw_; ++c) {
            const Tap& tx = taps_x_[c];
            dst[static_cast<std::size_t>(r) * tw_ + c] = static_cast<T>(
                ty.w0 * (tx.w0 * src[static_cast<std::size_t>(ty.i0) * src_w_ + tx.i0] +
                         tx.w1 * src[static_cast<std::size_t>(ty.i0) * src_w_ + tx.i1]) +
                ty.w1 * (tx.w0 * src[static_cast<std::size_t>(ty.i1) * src_w_ + tx.i0] +
                         tx.w1 * src[static_cast<std::size_t>(ty.i1) * src_w_ + tx.i1]));
          }
        }
      }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> dx(dy.n, dy.c, src_h_, src_w_);
    for (int s = 0; s < dy.n; ++s) {
      for (int ic = 0; ic < dy.c; ++ic) {
        const T* src = dy.sample(s) + static_cast<std::size_t>(ic) * dy.plane();
        T* dst = dx.sample(s) + static_cast<std::size_t>(ic) * dx.plane();
        for (int r = 0; r < th_; ++r) {
          const Tap& ty = taps_y_[r];
          for (int c = 0; c < tw_; ++c) {
            const Tap& tx = taps_x_[c];
            const T g = src[static_cast<std::size_t>(r) * tw_ + c];
            dst[static_cast<std::size_t>(ty.i0) * src_w_ + tx.i0] += static_cast<T>(ty.w0 * tx.w0) * g;
            dst[static_cast<std::size_t>(ty.i0) * src_w_ + tx.i1] += static_cast<T>(ty.w0 * tx.w1) * g;
            dst[static_cast<std::size_t>(ty.i1) * src_w_ + tx.i0] += static_cast<T>(ty.w1 * tx.w0) * g;
            dst[static_cast<std::size_t>(ty.i1) * src_w_ + tx.i1] += static_cast<T>(ty.w1 * tx.w1) * g;
          }
        }
      }
    }
    return dx;
  }

 private:
  struct Tap {
    int i0, i1;
    double w0, w1;
  };

  static Tap make_tap(int dst, int dst_n, int src_n) {
    const double scale = static_cast<double>(src_n) / dst_n;
    double pos = (dst + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src_n - 1));
    Tap t;
    t.i0 = static_cast<int>(pos);
    t.i1 = std::min(t.i0 + 1, src_n - 1);
    t.w1 = pos - t.i0;
    t.w0 = 1.0 - t.w1;
    return t;
  }

  void build_taps() {
    taps_y_.clear();
    taps_x_.clear();
    for (int r = 0; r < th_; ++r) taps_y_.push_back(make_tap(r, th_, src_h_));
    for (int c = 0; c < tw_; ++c) taps_x_.push_back(make_tap(c, tw_, src_w_));
  }

  int th_, tw_, src_h_ = 0, src_w_ = 0;
  std::vector<Tap> taps_y_, taps_x_;
};

// Channel-wise softmax.
template <typename T>
class SoftmaxC {
 public:
  Tensor4<T> forward(const Tensor4<T>& x) {
    y_ = Tensor4<T>(x.n, x.c, x.h, x.w);
    const std::size_t plane = x.plane();
    for (int s = 0; s < x.n; ++s) {
      const T* in = x.sample(s);
      T* out = y_.sample(s);
      for (std::size_t p = 0; p < plane; ++p) {
        T mx = in[p];
        for (int ic = 1; ic < x.c; ++ic) mx = std::max(mx, in[ic * plane + p]);
        T sum = T(0);
        for (int ic = 0; ic < x.c; ++ic) {
          const T e = std::exp(in[ic * plane + p] - mx);
          out[ic * plane + p] = e;
          sum += e;
        }
        for (int ic = 0; ic < x.c; ++ic) out[ic * plane + p] /= sum;
      }
    }
    return y_;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
    const std::size_t plane = dy.plane();
    for (int s = 0; s < dy.n; ++s) {
      const T* y = y_.sample(s);
      const T* g = dy.sample(s);
      T* out = dx.sample(s);
      for (std::size_t p = 0; p < plane; ++p) {
        T dot = T(0);
        for (int ic = 0; ic < dy.c; ++ic) dot += g[ic * plane + p] * y[ic * plane + p];
        for (int ic = 0; ic < dy.c; ++ic) {
          out[ic * plane + p] = y[ic * plane + p] * (g[ic * plane + p] - dot);
        }
      }
    }
    return dx;
  }

 private:
  Tensor4<T> y_;
};

template <typename T>
inline Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) {
    throw std::invalid_argument("concat: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor4<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int s = 0; s < a.n; ++s) {
    std::copy(a.sample(s), a.sample(s) + a.sample_stride(), y.sample(s));
    std::copy(b.sample(s), b.sample(s) + b.sample_stride(), y.sample(s) + a.sample_stride());
  }
  return y;
}

template <typename T>
inline void split_channels(const Tensor4<T>& d, Tensor4<T>& da, Tensor4<T>& db, int ca, int cb) {
  da = Tensor4<T>(d.n, ca, d.h, d.w);
  db = Tensor4<T>(d.n, cb, d.h, d.w);
  for (int s = 0; s < d.n; ++s) {
    std::copy(d.sample(s), d.sample(s) + da.sample_stride(), da.sample(s));
    std::copy(d.sample(s) + da.sample_stride(), d.sample(s) + d.sample_stride(), db.sample(s));
  }
}

// Factorized residual block: two 3x1/1x3 pairs, the second pair dilated,
// with a skip connection. Channel count is preserved.
template <typename T>
class NonBottleneck1d {
 public:
  NonBottleneck1d(int channels, int dilation)
      : a1_(channels, channels, 3, 1, 1, 1, 0),
        a2_(channels, channels, 1, 3, 1, 0, 1),
        b1_(channels, channels, 3, 1, 1, dilation, 0, dilation, 1),
        b2_(channels, channels, 1, 3, 1, 0, dilation, 1, dilation) {}

  void init(Rng& rng) {
    a1_.init(rng);
    a2_.init(rng);
    b1_.init(rng);
    b2_.init(rng);
  }

  Tensor4<T> forward(const Tensor4<T>& x) {
    Tensor4<T> t = r1_.forward(a1_.forward(x));
    t = r2_.forward(a2_.forward(t));
    t = r3_.forward(b1_.forward(t));
    t = b2_.forward(t);
    for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] += x.v[i];
    return r4_.forward(t);
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> d = r4_.backward(dy);
    const Tensor4<T> skip = d;
    d = b2_.backward(d);
    d = b1_.backward(r3_.backward(d));
    d = a2_.backward(r2_.backward(d));
    d = a1_.backward(r1_.backward(d));
    for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] += skip.v[i];
    return d;
  }

  void collect(std::vector<ParamView<T>>& out, const std::string& prefix) {
    a1_.collect(out, prefix + ".a1");
    a2_.collect(out, prefix + ".a2");
    b1_.collect(out, prefix + ".b1");
    b2_.collect(out, prefix + ".b2");
  }

 private:
  Conv2d<T> a1_, a2_, b1_, b2_;
  ReLU<T> r1_, r2_, r3_, r4_;
};

// Strided conv and max pool side by side, channel-concatenated, then ReLU.
template <typename T>
class Downsampler {
 public:
  Downsampler(int in_ch, int out_ch)
      : in_ch_(in_ch), out_ch_(out_ch), conv_(in_ch, out_ch - in_ch, 3, 3, 2, 1, 1) {
    if (out_ch <= in_ch) {
      throw std::invalid_argument("downsampler: out channels must exceed in channels");
    }
  }

  void init(Rng& rng) { conv_.init(rng); }

  Tensor4<T> forward(const Tensor4<T>& x) {
    return relu_.forward(concat_channels(conv_.forward(x), pool_.forward(x)));
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> d = relu_.backward(dy);
    Tensor4<T> dconv, dpool;
    split_channels(d, dconv, dpool, out_ch_ - in_ch_, in_ch_);
    Tensor4<T> dx = conv_.backward(dconv);
    const Tensor4<T> dxp = pool_.backward(dpool);
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dxp.v[i];
    return dx;
  }

  void collect(std::vector<ParamView<T>>& out, const std::string& prefix) {
    conv_.collect(out, prefix + ".conv");
  }

 private:
  int in_ch_, out_ch_;
  Conv2d<T> conv_;
  MaxPool2<T> pool_;
  ReLU<T> relu_;
};

}  // namespace nn
}  // namespace vplane
