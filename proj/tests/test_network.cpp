#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "support.hpp"
#include "vplane/network.hpp"
#include "vplane/rng.hpp"

using namespace vplane;
using namespace vplane::testsup;

namespace {
ModelConfig desk_config(FusionTopology topology) {
  ModelConfig cfg;
  cfg.topology = topology;
  return cfg;  // defaults: 128x64, K=4, b=16, depth=2, stride=4, m=16
}
}  // namespace

TEST_CASE("forward emits full-res K+1 seg logits and a 1/stride heatmap", "[network]") {
  for (const FusionTopology t : kAllTopologies) {
    Model<float> model(desk_config(t), 11);
    Rng rng(3);
    const Tensor4<float> x = random_input<float>(model.config(), 2, rng);
    const ForwardOutput<float> out = model.forward(x);
    INFO("topology " << to_string(t));
    REQUIRE(out.seg_logits.n == 2);
    REQUIRE(out.seg_logits.c == 5);
    REQUIRE(out.seg_logits.h == 64);
    REQUIRE(out.seg_logits.w == 128);
    REQUIRE(out.vp_heatmap.n == 2);
    REQUIRE(out.vp_heatmap.c == 1);
    REQUIRE(out.vp_heatmap.h == 16);
    REQUIRE(out.vp_heatmap.w == 32);
    for (const float v : out.seg_logits.v) REQUIRE(std::isfinite(v));
    for (const float v : out.vp_heatmap.v) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("forward rejects mismatched input shapes", "[network]") {
  Model<float> model(desk_config(FusionTopology::PARALLEL), 1);
  REQUIRE_THROWS_AS(model.forward(Tensor4<float>(1, 3, 64, 64)), std::invalid_argument);
  REQUIRE_THROWS_AS(model.forward(Tensor4<float>(1, 1, 64, 128)), std::invalid_argument);
}

TEST_CASE("parameter counts match the closed-form conv arithmetic", "[network]") {
  // Conv params = out*in*kh*kw + out; NB block = four factorized convs.
  const auto counts_for = [](FusionTopology t) {
    Model<float> model(desk_config(t), 5);
    return model.count_parameters();
  };

  const auto ld_mid_vp = counts_for(FusionTopology::LD_MID_VP);
  REQUIRE(ld_mid_vp.at("encoder") == 141852);
  REQUIRE(ld_mid_vp.at("lane_decoder") == 39365);
  REQUIRE(ld_mid_vp.at("middle") == 4256);
  REQUIRE(ld_mid_vp.at("vp_head") == 2337);
  REQUIRE(ld_mid_vp.at("total") == 187810);

  const auto parallel = counts_for(FusionTopology::PARALLEL);
  REQUIRE(parallel.at("encoder") == 141852);
  REQUIRE(parallel.at("lane_decoder") == 39365);
  REQUIRE(parallel.at("middle") == 0);
  REQUIRE(parallel.at("vp_head") == 9249);
  REQUIRE(parallel.at("total") == 190466);

  const auto ld_vp = counts_for(FusionTopology::LD_VP);
  REQUIRE(ld_vp.at("middle") == 0);
  REQUIRE(ld_vp.at("vp_head") == 9969);
  REQUIRE(ld_vp.at("total") == 191186);

  const auto vp_mid_ld = counts_for(FusionTopology::VP_MID_LD);
  REQUIRE(vp_mid_ld.at("middle") == 4192);
  REQUIRE(vp_mid_ld.at("lane_decoder") == 25541);
  REQUIRE(vp_mid_ld.at("total") == 180834);
}

TEST_CASE("LD_MID_VP keeps the VP branch under 5% of total parameters", "[network]") {
  Model<float> model(desk_config(FusionTopology::LD_MID_VP), 5);
  const auto counts = model.count_parameters();
  const double branch =
      static_cast<double>(counts.at("middle") + counts.at("vp_head"));
  REQUIRE(branch / static_cast<double>(counts.at("total")) < 0.05);
}

TEST_CASE("PARALLEL and LD_MID_VP differ only in middle and VP-head width", "[network]") {
  Model<float> a(desk_config(FusionTopology::PARALLEL), 5);
  Model<float> b(desk_config(FusionTopology::LD_MID_VP), 5);
  const auto ca = a.count_parameters();
  const auto cb = b.count_parameters();
  REQUIRE(ca.at("encoder") == cb.at("encoder"));
  REQUIRE(ca.at("lane_decoder") == cb.at("lane_decoder"));
  REQUIRE(ca.at("middle") != cb.at("middle"));
  REQUIRE(ca.at("vp_head") != cb.at("vp_head"));
}

TEST_CASE("same seed builds bit-identical parameters", "[network]") {
  for (const FusionTopology t : kAllTopologies) {
    Model<float> a(tiny_config(t), 77);
    Model<float> b(tiny_config(t), 77);
    auto& pa = a.params();
    auto& pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      REQUIRE(pa[i].name == pb[i].name);
      REQUIRE(*pa[i].value == *pb[i].value);
    }
  }
}

TEST_CASE("every tiny gradcheck config stays under 5k parameters", "[network]") {
  for (const FusionTopology t : kAllTopologies) {
    Model<double> model(tiny_config(t), 1);
    INFO("topology " << to_string(t));
    REQUIRE(model.count_parameters().at("total") <= 5000);
  }
}

TEST_CASE("analytic gradients match central differences on all topologies", "[network][gradcheck]") {
  for (const FusionTopology t : kAllTopologies) {
    const GradCheckResult res = gradcheck_topology(t, 2024);
    INFO("topology " << to_string(t) << " worst " << res.worst_param << " rel "
                     << res.max_rel_err << " over " << res.params_checked << " params");
    REQUIRE(res.params_checked > 0);
    REQUIRE(res.max_rel_err <= 1e-4);
  }
}

TEST_CASE("PARALLEL has exactly-zero cross-task gradients", "[network]") {
  const ModelConfig cfg = tiny_config(FusionTopology::PARALLEL);
  Model<double> model(cfg, 31);
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(31, 0xBA7C, static_cast<std::uint64_t>(trial)));
    const Tensor4<double> x = random_input<double>(cfg, 2, rng);
    const BatchTargets<double> t = random_targets<double>(cfg, 2, rng);
    REQUIRE(cross_task_grad(model, x, t, true) == 0.0);
    REQUIRE(cross_task_grad(model, x, t, false) == 0.0);
  }
}

TEST_CASE("fused topologies leak the expected cross-task gradients", "[network]") {
  for (const FusionTopology t : {FusionTopology::LD_VP, FusionTopology::LD_MID_VP}) {
    const ModelConfig cfg = tiny_config(t);
    Model<double> model(cfg, 32);
    for (int trial = 0; trial < 10; ++trial) {
      Rng rng(derive_seed(32, 0xBA7C, static_cast<std::uint64_t>(trial)));
      const Tensor4<double> x = random_input<double>(cfg, 2, rng);
      const BatchTargets<double> targets = random_targets<double>(cfg, 2, rng);
      INFO("topology " << to_string(t) << " trial " << trial);
      REQUIRE(cross_task_grad(model, x, targets, true) > 0.0);
    }
  }
  const ModelConfig cfg = tiny_config(FusionTopology::VP_MID_LD);
  Model<double> model(cfg, 33);
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(33, 0xBA7C, static_cast<std::uint64_t>(trial)));
    const Tensor4<double> x = random_input<double>(cfg, 2, rng);
    const BatchTargets<double> targets = random_targets<double>(cfg, 2, rng);
    REQUIRE(cross_task_grad(model, x, targets, false) > 0.0);
  }
}

TEST_CASE("forward is deterministic across repeated calls", "[network]") {
  Model<float> model(tiny_config(FusionTopology::LD_MID_VP), 9);
  Rng rng(4);
  const Tensor4<float> x = random_input<float>(model.config(), 3, rng);
  const ForwardOutput<float> a = model.forward(x);
  const ForwardOutput<float> b = model.forward(x);
  REQUIRE(a.seg_logits.v == b.seg_logits.v);
  REQUIRE(a.vp_heatmap.v == b.vp_heatmap.v);
}
