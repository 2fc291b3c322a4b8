#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "vplane/nn.hpp"
#include "vplane/rng.hpp"
#include "vplane/tensor.hpp"

using namespace vplane;

namespace {

Tensor4<double> rand_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor4<double> x(n, c, h, w);
  for (auto& v : x.v) v = rng.uniform(lo, hi);
  return x;
}

// Finite-difference check of every parameter and every input element against
// the analytic backward pass, under a fixed random linear readout.
template <typename Layer>
double fd_worst_rel(Layer& layer, Tensor4<double> x, Rng& rng) {
  Tensor4<double> y0 = layer.forward(x);
  std::vector<double> w(y0.v.size());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  const auto loss = [&]() {
    const Tensor4<double> y = layer.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) s += w[i] * y.v[i];
    return s;
  };

  std::vector<ParamView<double>> params;
  layer.collect(params, "p");
  for (auto& p : params) std::fill(p.grad->begin(), p.grad->end(), 0.0);
  layer.forward(x);
  Tensor4<double> dy(y0.n, y0.c, y0.h, y0.w);
  dy.v.assign(w.begin(), w.end());
  const Tensor4<double> dx = layer.backward(dy);

  double worst = 0.0;
  const double eps = 1e-6;
  const auto probe = [&](double* slot, double analytic) {
    const double orig = *slot;
    *slot = orig + eps;
    const double lp = loss();
    *slot = orig - eps;
    const double lm = loss();
    *slot = orig;
    const double fd = (lp - lm) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic - fd) /
                                std::max({std::abs(analytic), std::abs(fd), 1e-3}));
  };
  for (auto& p : params)
    for (std::size_t i = 0; i < p.value->size(); ++i) probe(&(*p.value)[i], (*p.grad)[i]);
  for (std::size_t i = 0; i < x.v.size(); ++i) probe(&x.v[i], dx.v[i]);
  return worst;
}

void set_bias(std::vector<ParamView<double>>& params, Rng& rng) {
  for (auto& p : params) {
    if (p.name.size() < 5 || p.name.compare(p.name.size() - 5, 5, ".bias") != 0) continue;
    for (auto& v : *p.value) v = rng.uniform(0.02, 0.1);
  }
}

}  // namespace

TEST_CASE("conv 1x1 with identity weight reproduces its input", "[nn]") {
  nn::Conv2d<double> conv(1, 1, 1, 1, 1, 0, 0);
  std::vector<ParamView<double>> params;
  conv.collect(params, "c");
  (*params[0].value)[0] = 1.0;
  Rng rng(1);
  const Tensor4<double> x = rand_tensor(2, 1, 5, 7, rng);
  const Tensor4<double> y = conv.forward(x);
  REQUIRE(y.v == x.v);
}

TEST_CASE("conv 3x3 all-ones kernel sums the zero-padded window", "[nn]") {
  nn::Conv2d<double> conv(1, 1, 3, 3, 1, 1, 1);
  std::vector<ParamView<double>> params;
  conv.collect(params, "c");
  std::fill(params[0].value->begin(), params[0].value->end(), 1.0);
  Tensor4<double> x(1, 1, 3, 3);
  for (int i = 0; i < 9; ++i) x.v[i] = i + 1;  // 1..9
  const Tensor4<double> y = conv.forward(x);
  REQUIRE(y.at(0, 0, 1, 1) == 45.0);      // full window
  REQUIRE(y.at(0, 0, 0, 0) == 12.0);      // 1+2+4+5
  REQUIRE(y.at(0, 0, 2, 2) == 28.0);      // 5+6+8+9
}

TEST_CASE("conv output dims follow stride, padding and dilation", "[nn]") {
  nn::Conv2d<double> s2(3, 4, 3, 3, 2, 1, 1);
  REQUIRE(s2.out_h(64) == 32);
  REQUIRE(s2.out_w(128) == 64);
  nn::Conv2d<double> dil(3, 4, 3, 1, 1, 2, 0, 2, 1);
  REQUIRE(dil.out_h(10) == 10);
  REQUIRE(dil.out_w(10) == 10);
}

TEST_CASE("conv rejects wrong channel count", "[nn]") {
  nn::Conv2d<double> conv(3, 4, 3, 3, 1, 1, 1);
  REQUIRE_THROWS_AS(conv.forward(Tensor4<double>(1, 2, 8, 8)), std::invalid_argument);
}

TEST_CASE("conv gradients match finite differences across variants", "[nn]") {
  Rng rng(42);
  {
    nn::Conv2d<double> l(3, 4, 3, 3, 1, 1, 1);
    l.init(rng);
    REQUIRE(fd_worst_rel(l, rand_tensor(2, 3, 6, 6, rng), rng) < 1e-6);
  }
  {
    nn::Conv2d<double> l(3, 5, 3, 3, 2, 1, 1);
    l.init(rng);
    REQUIRE(fd_worst_rel(l, rand_tensor(2, 3, 8, 8, rng), rng) < 1e-6);
  }
  {
    nn::Conv2d<double> l(4, 4, 3, 1, 1, 2, 0, 2, 1);
    l.init(rng);
    REQUIRE(fd_worst_rel(l, rand_tensor(2, 4, 6, 6, rng), rng) < 1e-6);
  }
  {
    nn::Conv2d<double> l(4, 4, 1, 3, 1, 0, 2, 1, 2);
    l.init(rng);
    REQUIRE(fd_worst_rel(l, rand_tensor(2, 4, 6, 6, rng), rng) < 1e-6);
  }
}

TEST_CASE("relu clips negatives and routes gradients through survivors", "[nn]") {
  nn::ReLU<double> relu;
  Tensor4<double> x(1, 1, 1, 4);
  x.v = {-2.0, -0.5, 0.5, 3.0};
  const Tensor4<double> y = relu.forward(x);
  REQUIRE(y.v == std::vector<double>{0.0, 0.0, 0.5, 3.0});
  Tensor4<double> dy(1, 1, 1, 4);
  dy.v = {1.0, 2.0, 3.0, 4.0};
  const Tensor4<double> dx = relu.backward(dy);
  REQUIRE(dx.v == std::vector<double>{0.0, 0.0, 3.0, 4.0});
}

TEST_CASE("maxpool picks window maxima and routes gradients to them", "[nn]") {
  nn::MaxPool2<double> pool;
  Tensor4<double> x(1, 1, 2, 4);
  x.v = {1.0, 5.0, 2.0, 0.0,
         3.0, 4.0, 1.0, 9.0};
  const Tensor4<double> y = pool.forward(x);
  REQUIRE(y.v == std::vector<double>{5.0, 9.0});
  Tensor4<double> dy(1, 1, 1, 2);
  dy.v = {1.0, 2.0};
  const Tensor4<double> dx = pool.backward(dy);
  REQUIRE(dx.v == std::vector<double>{0.0, 1.0, 0.0, 0.0,
                                      0.0, 0.0, 0.0, 2.0});
}

TEST_CASE("maxpool rejects odd spatial dims", "[nn]") {
  nn::MaxPool2<double> pool;
  REQUIRE_THROWS_AS(pool.forward(Tensor4<double>(1, 1, 3, 4)), std::invalid_argument);
}

TEST_CASE("resize to the same dims is the identity", "[nn]") {
  nn::Resize<double> rz(6, 8);
  Rng rng(3);
  const Tensor4<double> x = rand_tensor(2, 3, 6, 8, rng);
  const Tensor4<double> y = rz.forward(x);
  for (std::size_t i = 0; i < x.v.size(); ++i) REQUIRE(y.v[i] == Catch::Approx(x.v[i]).margin(1e-12));
}

TEST_CASE("resize doubles a row with half-pixel alignment", "[nn]") {
  nn::Resize<double> rz(1, 4);
  Tensor4<double> x(1, 1, 1, 2);
  x.v = {0.0, 1.0};
  const Tensor4<double> y = rz.forward(x);
  // centers 0.5,1.5,2.5,3.5 map to source -0.25,0.25,0.75,1.25 (clamped)
  REQUIRE(y.v[0] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(y.v[1] == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(y.v[2] == Catch::Approx(0.75).margin(1e-12));
  REQUIRE(y.v[3] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("resize backward is the exact adjoint of forward", "[nn]") {
  Rng rng(11);
  for (const auto [sh, sw, th, tw] : {std::array<int, 4>{4, 6, 8, 12},
                                      std::array<int, 4>{8, 12, 4, 6},
                                      std::array<int, 4>{5, 7, 9, 3}}) {
    nn::Resize<double> rz(th, tw);
    const Tensor4<double> x = rand_tensor(1, 2, sh, sw, rng);
    const Tensor4<double> g = rand_tensor(1, 2, th, tw, rng);
    const Tensor4<double> y = rz.forward(x);
    const Tensor4<double> xt = rz.backward(g);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) lhs += y.v[i] * g.v[i];
    for (std::size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * xt.v[i];
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("channel softmax normalizes, shifts out constants, and matches FD", "[nn]") {
  nn::SoftmaxC<double> sm;
  Rng rng(17);
  Tensor4<double> x = rand_tensor(2, 4, 3, 3, rng, -3.0, 3.0);
  const Tensor4<double> y = sm.forward(x);
  for (int s = 0; s < 2; ++s)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int ch = 0; ch < 4; ++ch) sum += y.at(s, ch, r, c);
        REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
      }

  Tensor4<double> shifted = x;
  for (auto& v : shifted.v) v += 7.5;
  const Tensor4<double> y2 = sm.forward(shifted);
  for (std::size_t i = 0; i < y.v.size(); ++i)
    REQUIRE(y2.v[i] == Catch::Approx(y.v[i]).margin(1e-12));

  // FD on the inputs under a random linear readout
  std::vector<double> w(y.v.size());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  sm.forward(x);
  Tensor4<double> dy(2, 4, 3, 3);
  dy.v.assign(w.begin(), w.end());
  const Tensor4<double> dx = sm.backward(dy);
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double orig = x.v[i];
    const auto loss = [&]() {
      const Tensor4<double> yy = sm.forward(x);
      double s = 0.0;
      for (std::size_t k = 0; k < yy.v.size(); ++k) s += w[k] * yy.v[k];
      return s;
    };
    x.v[i] = orig + eps;
    const double lp = loss();
    x.v[i] = orig - eps;
    const double lm = loss();
    x.v[i] = orig;
    const double fd = (lp - lm) / (2.0 * eps);
    worst = std::max(worst, std::abs(dx.v[i] - fd) / std::max({std::abs(dx.v[i]), std::abs(fd), 1e-3}));
  }
  REQUIRE(worst < 1e-6);
}

TEST_CASE("non-bottleneck block with zeroed convs reduces to relu of input", "[nn]") {
  nn::NonBottleneck1d<double> nb(3, 1);
  std::vector<ParamView<double>> params;
  nb.collect(params, "nb");
  for (auto& p : params) std::fill(p.value->begin(), p.value->end(), 0.0);
  Rng rng(5);
  const Tensor4<double> x = rand_tensor(1, 3, 4, 4, rng);
  const Tensor4<double> y = nb.forward(x);
  for (std::size_t i = 0; i < x.v.size(); ++i)
    REQUIRE(y.v[i] == std::max(x.v[i], 0.0));
}

TEST_CASE("non-bottleneck block gradients match finite differences", "[nn]") {
  Rng rng(23);
  for (const int dil : {1, 2}) {
    nn::NonBottleneck1d<double> nb(4, dil);
    nb.init(rng);
    std::vector<ParamView<double>> params;
    nb.collect(params, "nb");
    set_bias(params, rng);  // keep ReLU preactivations off exact kinks
    REQUIRE(fd_worst_rel(nb, rand_tensor(2, 4, 6, 6, rng), rng) < 1e-5);
  }
}

TEST_CASE("downsampler halves space, widens channels, and matches FD", "[nn]") {
  Rng rng(29);
  nn::Downsampler<double> ds(3, 8);
  ds.init(rng);
  std::vector<ParamView<double>> params;
  ds.collect(params, "ds");
  set_bias(params, rng);
  Tensor4<double> x = rand_tensor(2, 3, 8, 12, rng, 0.05, 1.0);
  const Tensor4<double> y = ds.forward(x);
  REQUIRE(y.c == 8);
  REQUIRE(y.h == 4);
  REQUIRE(y.w == 6);
  REQUIRE(fd_worst_rel(ds, x, rng) < 1e-5);
}

TEST_CASE("downsampler requires widening", "[nn]") {
  REQUIRE_THROWS_AS(nn::Downsampler<double>(8, 8), std::invalid_argument);
}

TEST_CASE("concat then split round-trips both channel groups", "[nn]") {
  Rng rng(31);
  const Tensor4<double> a = rand_tensor(2, 3, 4, 5, rng);
  const Tensor4<double> b = rand_tensor(2, 2, 4, 5, rng);
  const Tensor4<double> cat = nn::concat_channels(a, b);
  REQUIRE(cat.c == 5);
  Tensor4<double> a2, b2;
  nn::split_channels(cat, a2, b2, 3, 2);
  REQUIRE(a2.v == a.v);
  REQUIRE(b2.v == b.v);
}
