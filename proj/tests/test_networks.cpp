#include <catch2/catch_amalgamated.hpp>
#include <set>

#include "ctseg/network.hpp"
#include "oracles.hpp"

using namespace ctseg;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.in_channels = 1;
  cfg.num_classes = 3;
  cfg.base_features = 4;
  cfg.num_stages = 2;
  cfg.se_reduction = 4;
  return cfg;
}

// Stand-alone residual block parameters: in == out channels, stride 1.
ModelParams<double> block_params(int64_t in, int64_t out, bool projection, uint64_t seed) {
  ModelParams<double> p;
  Rng rng(seed);
  auto put = [&](const std::string& name, Shape shape, double stddev) {
    Tensor<double> t(shape);
    if (stddev > 0) oracle::fill_normal(t, rng, 0, stddev);
    p.order.push_back(name);
    p.tensors.emplace(name, std::move(t));
  };
  put("b.conv1.w", Shape{out, in, 3, 3, 3}, 0.2);
  put("b.norm1.g", Shape{out}, 0);
  for (auto& v : p.at("b.norm1.g").values()) v = 1.0;
  put("b.norm1.b", Shape{out}, 0);
  put("b.conv2.w", Shape{out, out, 3, 3, 3}, 0.2);
  put("b.norm2.g", Shape{out}, 0);
  for (auto& v : p.at("b.norm2.g").values()) v = 1.0;
  put("b.norm2.b", Shape{out}, 0);
  if (projection) put("b.proj.w", Shape{out, in, 1, 1, 1}, 0.3);
  return p;
}

}  // namespace

TEST_CASE("residual block: zero main path leaves activation(x)") {
  ModelParams<double> p = block_params(2, 2, false, 1);
  for (auto& v : p.at("b.conv1.w").values()) v = 0;
  for (auto& v : p.at("b.conv2.w").values()) v = 0;
  Rng rng(2);
  Tensor<double> x(Shape{1, 2, 4, 4, 4});
  oracle::fill_random(x, rng);
  auto y = residual_conv_block(p, "b", x, triple(1));
  CHECK(y.shape() == x.shape());
  auto want = leaky_relu(x, 0.01);
  for (size_t i = 0; i < y.values().size(); ++i)
    CHECK_THAT(y.values()[i], Catch::Matchers::WithinAbs(want.values()[i], 1e-12));
}

TEST_CASE("residual block: stride 2 halves even extents") {
  ModelParams<double> p = block_params(2, 4, true, 3);
  Tensor<double> x(Shape{1, 2, 8, 6, 4});
  auto y = residual_conv_block(p, "b", x, triple(2));
  CHECK(y.shape() == Shape{1, 4, 4, 3, 2});
}

TEST_CASE("residual block: channel mismatch without projection is rejected") {
  ModelParams<double> p = block_params(2, 4, false, 4);
  Tensor<double> x(Shape{1, 2, 4, 4, 4});
  CHECK_THROWS_AS(residual_conv_block(p, "b", x, triple(1)), invalid_argument_error);
}

TEST_CASE("residual block: gradient flows through both paths") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    ModelParams<double> p = block_params(2, 2, false, seed + 10);
    Rng rng(seed);
    Tensor<double> x(Shape{1, 2, 4, 4, 4});
    oracle::fill_random(x, rng);
    x.set_leaf();
    p.make_leaves();
    std::vector<Tensor<double>*> leaves{&x, &p.at("b.conv1.w"), &p.at("b.conv2.w"),
                                        &p.at("b.norm1.g"), &p.at("b.norm2.b")};
    Tensor<double> w(Shape{1, 2, 4, 4, 4});
    oracle::fill_random(w, rng);
    auto res = oracle::check_gradients(
        [&] { return sum(mul(residual_conv_block(p, "b", x, triple(1)), w)); }, leaves, 1e-5, 40);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("plain block: shape contract and zero propagation") {
  ModelParams<double> p = block_params(3, 5, false, 20);
  Tensor<double> x(Shape{1, 3, 4, 4, 4});
  auto y = plain_conv_block(p, "b", x);
  CHECK(y.shape() == Shape{1, 5, 4, 4, 4});

  for (auto& v : p.at("b.conv1.w").values()) v = 0;
  for (auto& v : p.at("b.conv2.w").values()) v = 0;
  auto z = plain_conv_block(p, "b", x);
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("plain block: gradients match finite differences") {
  ModelParams<double> p = block_params(2, 3, false, 30);
  Rng rng(31);
  Tensor<double> x(Shape{1, 2, 4, 4, 4});
  oracle::fill_random(x, rng);
  x.set_leaf();
  p.make_leaves();
  Tensor<double> w(Shape{1, 3, 4, 4, 4});
  oracle::fill_random(w, rng);
  auto res = oracle::check_gradients(
      [&] { return sum(mul(plain_conv_block(p, "b", x), w)); },
      {&x, &p.at("b.conv1.w"), &p.at("b.conv2.w")}, 1e-5, 40);
  CHECK(res.max_rel_err < 1e-4);
}

namespace {

ModelParams<double> se_params(int64_t channels, int64_t r, uint64_t seed) {
  ModelParams<double> p;
  Rng rng(seed);
  auto put = [&](const std::string& name, Shape shape, double stddev) {
    Tensor<double> t(shape);
    if (stddev > 0) oracle::fill_normal(t, rng, 0, stddev);
    p.order.push_back(name);
    p.tensors.emplace(name, std::move(t));
  };
  put("se.fc1.w", Shape{channels / r, channels, 1, 1, 1}, 0.4);
  put("se.fc1.b", Shape{channels / r}, 0);
  put("se.fc2.w", Shape{channels, channels / r, 1, 1, 1}, 0.4);
  put("se.fc2.b", Shape{channels}, 0);
  return p;
}

}  // namespace

TEST_CASE("residual SE block: closed-form gating") {
  const int64_t C = 4;
  ModelParams<double> p = se_params(C, 2, 40);
  for (auto& v : p.at("se.fc1.w").values()) v = 0;
  for (auto& v : p.at("se.fc2.w").values()) v = 0;
  Rng rng(41);
  Tensor<double> x(Shape{1, C, 3, 3, 3});
  oracle::fill_random(x, rng);

  SECTION("excitation forced to ~1 doubles the input") {
    for (auto& v : p.at("se.fc2.b").values()) v = 50.0;  // sigmoid -> 1
    auto y = residual_se_block(p, "se", x);
    for (size_t i = 0; i < y.values().size(); ++i)
      CHECK_THAT(y.values()[i], Catch::Matchers::WithinAbs(2.0 * x.values()[i], 1e-9));
  }
  SECTION("excitation exactly s gives y = x(1+s)") {
    const double s = 0.25;
    const double logit = std::log(s / (1 - s));
    for (auto& v : p.at("se.fc2.b").values()) v = logit;
    auto y = residual_se_block(p, "se", x);
    for (size_t i = 0; i < y.values().size(); ++i)
      CHECK_THAT(y.values()[i], Catch::Matchers::WithinAbs((1 + s) * x.values()[i], 1e-12));
  }
  SECTION("zero gate contribution leaves y = x") {
    for (auto& v : p.at("se.fc2.b").values()) v = -500.0;  // sigmoid -> 0
    auto y = residual_se_block(p, "se", x);
    for (size_t i = 0; i < y.values().size(); ++i)
      CHECK_THAT(y.values()[i], Catch::Matchers::WithinAbs(x.values()[i], 1e-12));
  }
}

TEST_CASE("SE reduction r=8 gives bottleneck width 4 at C=32") {
  NetworkConfig cfg;
  cfg.base_features = 32;
  cfg.num_stages = 1;
  cfg.se_reduction = 8;
  for (const auto& spec : enumerate_parameters(cfg)) {
    if (spec.name == "dec0.se.fc1.w") {
      CHECK(spec.shape == Shape{4, 32, 1, 1, 1});
      return;
    }
  }
  FAIL("dec0.se.fc1.w not found");
}

TEST_CASE("residual SE block: gradients through pooling and gating") {
  ModelParams<double> p = se_params(4, 2, 50);
  Rng rng(51);
  Tensor<double> x(Shape{1, 4, 3, 3, 3});
  oracle::fill_random(x, rng);
  x.set_leaf();
  p.make_leaves();
  Tensor<double> w(Shape{1, 4, 3, 3, 3});
  oracle::fill_random(w, rng);
  auto res = oracle::check_gradients(
      [&] { return sum(mul(residual_se_block(p, "se", x), w)); },
      {&x, &p.at("se.fc1.w"), &p.at("se.fc1.b"), &p.at("se.fc2.w"), &p.at("se.fc2.b")});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("build_model determinism and init statistics") {
  NetworkConfig cfg;
  cfg.base_features = 32;
  cfg.num_stages = 2;
  cfg.num_classes = 3;

  SECTION("same seed reproduces, different seed differs") {
    auto a = build_model<double>(cfg, 7);
    auto b = build_model<double>(cfg, 7);
    auto c = build_model<double>(cfg, 8);
    REQUIRE(a.order == b.order);
    bool any_diff = false;
    for (const auto& name : a.order) {
      CHECK(a.at(name).values() == b.at(name).values());
      if (a.at(name).values() != c.at(name).values()) any_diff = true;
    }
    CHECK(any_diff);
  }

  SECTION("xavier variance within 10% on large conv layers") {
    auto m = build_model<double>(cfg, 9);
    int checked = 0;
    for (const auto& spec : enumerate_parameters(cfg)) {
      if (spec.init != ParamInit::xavier_normal || numel(spec.shape) < 10000) continue;
      const auto& v = m.at(spec.name).values();
      double mean = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0;
      for (double x : v) var += (x - mean) * (x - mean);
      var /= static_cast<double>(v.size());
      const double want = 2.0 / static_cast<double>(spec.fan_in + spec.fan_out);
      CHECK(std::abs(var - want) / want < 0.10);
      ++checked;
    }
    CHECK(checked >= 2);
  }
}

TEST_CASE("student config swaps conv style except the initial conv") {
  NetworkConfig teacher = tiny_config();
  NetworkConfig student = teacher;
  student.conv_style = ConvStyle::separable;
  std::set<std::string> tn, sn;
  for (const auto& s : enumerate_parameters(teacher)) tn.insert(s.name);
  for (const auto& s : enumerate_parameters(student)) sn.insert(s.name);
  CHECK(sn.count("enc0.conv1.w") == 1);       // initial conv stays regular
  CHECK(sn.count("enc0.conv2.dw.w") == 1);    // the rest is factorized
  CHECK(sn.count("enc0.conv2.w") == 0);
  CHECK(tn.count("enc0.conv2.w") == 1);
  CHECK(sn.count("dec0.block.conv1.dw.w") == 1);
  CHECK(sn.count("dec0.up.w") == 1);          // upsampling stays regular
}

TEST_CASE("forward_segmentation shape contract") {
  NetworkConfig cfg = tiny_config();
  auto params = build_model<double>(cfg, 11);
  Tensor<double> x(Shape{1, 1, 16, 16, 16});
  Rng rng(12);
  oracle::fill_random(x, rng);
  auto logits = forward_segmentation(params, cfg, x);
  CHECK(logits.shape() == Shape{1, 3, 16, 16, 16});

  SECTION("forward twice is bitwise identical") {
    auto again = forward_segmentation(params, cfg, x);
    CHECK(logits.values() == again.values());
  }
  SECTION("indivisible extents are rejected with the required divisor") {
    Tensor<double> bad(Shape{1, 1, 10, 16, 16});
    CHECK_THROWS_WITH(forward_segmentation(params, cfg, bad),
                      Catch::Matchers::ContainsSubstring("divisible by 4"));
  }
  SECTION("shape grid over configs") {
    for (int stages : {1, 2}) {
      for (int64_t base : {2, 4}) {
        for (auto style : {ConvStyle::regular, ConvStyle::separable}) {
          NetworkConfig c;
          c.num_stages = stages;
          c.base_features = base;
          c.num_classes = 4;
          c.se_reduction = 2;
          c.conv_style = style;
          auto p = build_model<double>(c, 13);
          Tensor<double> in(Shape{1, 1, 8, 8, 8});
          oracle::fill_random(in, rng);
          CHECK(forward_segmentation(p, c, in).shape() == Shape{1, 4, 8, 8, 8});
        }
      }
    }
  }
}

TEST_CASE("T1/T2 share encoder shapes, differ only in decoder upsampling") {
  NetworkConfig t1 = tiny_config();
  NetworkConfig t2 = tiny_config();
  t2.decoder_upsampling = Upsampling::trilinear;
  std::vector<ParamSpec> s1 = enumerate_parameters(t1);
  std::vector<ParamSpec> s2 = enumerate_parameters(t2);
  REQUIRE(s1.size() == s2.size());
  for (size_t i = 0; i < s1.size(); ++i) {
    REQUIRE(s1[i].name == s2[i].name);
    if (s1[i].name.starts_with("enc") || s1[i].name.starts_with("head")) {
      CHECK(s1[i].shape == s2[i].shape);
    } else if (s1[i].name.find(".up.") != std::string::npos) {
      CHECK(s1[i].shape != s2[i].shape);  // [Cin,Cout,2,2,2] vs [Cout,Cin,3,3,3]
    } else {
      CHECK(s1[i].shape == s2[i].shape);
    }
  }
}

TEST_CASE("count_parameters") {
  SECTION("matches an instantiate-and-count walk") {
    for (auto style : {ConvStyle::regular, ConvStyle::separable}) {
      NetworkConfig cfg = tiny_config();
      cfg.conv_style = style;
      auto params = build_model<double>(cfg, 17);
      CHECK(count_parameters(cfg) == params.total_count());
    }
  }
  SECTION("mobile variant is strictly smaller across the grid") {
    for (int stages : {1, 2, 3}) {
      for (int64_t base : {4, 8, 16}) {
        NetworkConfig reg;
        reg.num_stages = stages;
        reg.base_features = base;
        reg.se_reduction = 4;
        NetworkConfig mob = reg;
        mob.conv_style = ConvStyle::separable;
        CHECK(count_parameters(mob) < count_parameters(reg));
      }
    }
  }
  SECTION("doubling base_features more than doubles the count") {
    NetworkConfig small = tiny_config();
    NetworkConfig big = small;
    big.base_features *= 2;
    CHECK(count_parameters(big) > 2 * count_parameters(small));
  }
}

TEST_CASE("tiny end-to-end network gradient check") {
  NetworkConfig cfg;
  cfg.num_stages = 2;
  cfg.base_features = 4;
  cfg.num_classes = 2;
  cfg.se_reduction = 4;
  auto params = build_model<double>(cfg, 19);
  params.make_leaves();
  Rng rng(20);
  Tensor<double> x(Shape{1, 1, 8, 8, 8});
  oracle::fill_random(x, rng);
  Tensor<double> w(Shape{1, 2, 8, 8, 8});
  oracle::fill_random(w, rng, -0.1, 0.1);

  std::vector<Tensor<double>*> leaves;
  for (const auto& name : params.order) leaves.push_back(&params.at(name));
  auto res = oracle::check_gradients(
      [&] { return sum(mul(forward_segmentation(params, cfg, x), w)); }, leaves, 1e-5, 2, 21);
  INFO("checked " << res.checked << " entries, max rel err " << res.max_rel_err);
  CHECK(res.max_rel_err < 1e-3);
}
