#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vplane/heatmap.hpp"
#include "vplane/rng.hpp"

using namespace vplane;

namespace {
const ImageDims kImg{128, 64};
const HeatmapConfig kCfg{7.0, 4};

VPAnnotation vp_at(double x, double y) { return VPAnnotation{{x, y}, true}; }
}  // namespace

TEST_CASE("encode_vp: peak cell is exactly 1.0 and all values lie in [0,1]", "[heatmap]") {
  const Heatmap h = encode_vp(vp_at(53.7, 29.2), kImg, kCfg);
  REQUIRE(h.dims == ImageDims{32, 16});
  double max_val = 0.0;
  for (double v : h.values) {
    REQUIRE(std::isfinite(v));
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    max_val = std::max(max_val, v);
  }
  REQUIRE(max_val == 1.0);
}

TEST_CASE("encode_vp: analytic Gaussian value one std away from the peak", "[heatmap]") {
  // VP at the center of cell (5,10), so normalization divides by exactly 1
  // and cell (5,17) sits 7 = std grid cells away.
  const Heatmap h = encode_vp(vp_at(42.0, 22.0), kImg, kCfg);
  REQUIRE(h.at(5, 10) == 1.0);
  REQUIRE(h.at(5, 17) == Catch::Approx(std::exp(-0.5)).margin(1e-9));
  REQUIRE(h.at(5, 3) == Catch::Approx(std::exp(-0.5)).margin(1e-9));
  REQUIRE(h.at(12, 10) == Catch::Approx(std::exp(-0.5)).margin(1e-9));
}

TEST_CASE("encode_vp: deterministic", "[heatmap]") {
  const Heatmap a = encode_vp(vp_at(99.1, 17.3), kImg, kCfg);
  const Heatmap b = encode_vp(vp_at(99.1, 17.3), kImg, kCfg);
  REQUIRE(a.values == b.values);
}

TEST_CASE("encode_vp: values fall off monotonically along rays from the peak", "[heatmap]") {
  Rng rng(0x853c49e6748fea9bull);
  for (int trial = 0; trial < 10; ++trial) {
    const Heatmap h =
        encode_vp(vp_at(rng.uniform(0.0, 127.9), rng.uniform(0.0, 63.9)), kImg, kCfg);
    int pr = 0, pc = 0;
    double best = -1.0;
    for (int r = 0; r < h.dims.height; ++r) {
      for (int c = 0; c < h.dims.width; ++c) {
        if (h.at(r, c) > best) {
          best = h.at(r, c);
          pr = r;
          pc = c;
        }
      }
    }
    for (int c = pc + 1; c < h.dims.width; ++c) {
      if (h.at(pr, c) == 0.0) break;
      REQUIRE(h.at(pr, c) < h.at(pr, c - 1));
    }
    for (int c = pc - 1; c >= 0; --c) {
      if (h.at(pr, c) == 0.0) break;
      REQUIRE(h.at(pr, c) < h.at(pr, c + 1));
    }
    for (int r = pr + 1; r < h.dims.height; ++r) {
      if (h.at(r, pc) == 0.0) break;
      REQUIRE(h.at(r, pc) < h.at(r - 1, pc));
    }
    for (int r = pr - 1; r >= 0; --r) {
      if (h.at(r, pc) == 0.0) break;
      REQUIRE(h.at(r, pc) < h.at(r + 1, pc));
    }
  }
}

TEST_CASE("encode_vp: invisible or out-of-bounds VPs are rejected", "[heatmap]") {
  REQUIRE_THROWS_AS(encode_vp(VPAnnotation{{10.0, 10.0}, false}, kImg, kCfg),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(encode_vp(vp_at(128.0, 10.0), kImg, kCfg), std::out_of_range);
  REQUIRE_THROWS_AS(encode_vp(vp_at(-0.5, 10.0), kImg, kCfg), std::out_of_range);
  REQUIRE_THROWS_AS(encode_vp(vp_at(10.0, 64.0), kImg, kCfg), std::out_of_range);
}

TEST_CASE("decode_vp: uniform heatmap resolves to cell (0,0)", "[heatmap]") {
  Heatmap h(ImageDims{32, 16});
  for (double& v : h.values) v = 0.25;
  const DecodedVP d = decode_vp(h, kCfg);
  REQUIRE(d.point.x == 2.0);
  REQUIRE(d.point.y == 2.0);
  REQUIRE(d.confidence == 0.25);
}

TEST_CASE("decode_vp: equal peaks break ties by row-major order", "[heatmap]") {
  Heatmap h(ImageDims{32, 16});
  h.at(2, 3) = 0.9;
  h.at(5, 1) = 0.9;
  const DecodedVP d = decode_vp(h, kCfg);
  REQUIRE(d.point.x == (3 + 0.5) * 4);
  REQUIRE(d.point.y == (2 + 0.5) * 4);
  REQUIRE(d.confidence == 0.9);
}

TEST_CASE("decode_vp: rejects an empty heatmap", "[heatmap]") {
  REQUIRE_THROWS_AS(decode_vp(Heatmap{}, kCfg), std::invalid_argument);
}

TEST_CASE("encode/decode round trip stays within the quantization bound", "[heatmap]") {
  const double bound = kCfg.stride / 2.0 + 0.5;
  for (double y = 0.05; y < kImg.height; y += 1.73) {
    for (double x = 0.05; x < kImg.width; x += 2.31) {
      const DecodedVP d = decode_vp(encode_vp(vp_at(x, y), kImg, kCfg), kCfg);
      INFO("vp (" << x << "," << y << ") decoded (" << d.point.x << "," << d.point.y << ")");
      REQUIRE(std::abs(d.point.x - x) <= bound);
      REQUIRE(std::abs(d.point.y - y) <= bound);
    }
  }
}

TEST_CASE("norm_dist: zero, an exact hand value, and the failure cap", "[heatmap]") {
  const ImageDims dims{400, 300};  // diagonal 500
  REQUIRE(norm_dist({17.0, 4.0}, {17.0, 4.0}, dims) == 0.0);
  REQUIRE(norm_dist({100.0, 100.0}, {103.0, 104.0}, dims) == Catch::Approx(0.01).epsilon(1e-12));
  REQUIRE(norm_dist({0.0, 0.0}, {60.0, 0.0}, dims) == 0.1);
  REQUIRE(norm_dist({0.0, 0.0}, {399.0, 299.0}, dims) == 0.1);
}

TEST_CASE("norm_dist: symmetry, triangle inequality, scale covariance", "[heatmap]") {
  Rng rng(0xc4ceb9fe1a85ec53ull);
  const ImageDims dims{320, 240};
  for (int trial = 0; trial < 50; ++trial) {
    const Point2D a{rng.uniform(0.0, 320.0), rng.uniform(0.0, 240.0)};
    const Point2D b{rng.uniform(0.0, 320.0), rng.uniform(0.0, 240.0)};
    const Point2D c{rng.uniform(0.0, 320.0), rng.uniform(0.0, 240.0)};
    REQUIRE(norm_dist(a, b, dims) == norm_dist(b, a, dims));
    // Triangle inequality on the uncapped distances.
    REQUIRE(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9);

    const int k = 3;
    const Point2D ka{a.x * k, a.y * k}, kb{b.x * k, b.y * k};
    const ImageDims kdims{dims.width * k, dims.height * k};
    REQUIRE(norm_dist(ka, kb, kdims) == Catch::Approx(norm_dist(a, b, dims)).margin(1e-12));
  }
}
