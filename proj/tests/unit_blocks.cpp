#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "donna/blocks.hpp"
#include "donna/gradcheck.hpp"
#include "donna/layers.hpp"
#include "donna/rng.hpp"
#include "donna/snapshot.hpp"
#include "donna/space.hpp"
#include "donna/tensor.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace donna;
using Catch::Matchers::ContainsSubstring;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape), no_init);
  for (long long i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

const Tensor* find_param(Layer& net, const std::string& name, bool grad) {
  for (const auto& p : collect_params(net)) {
    if (p.name == name) return grad ? &p.param->grad : &p.param->value;
  }
  return nullptr;
}

Tensor* find_param_mut(Layer& net, const std::string& name) {
  for (const auto& p : collect_params(net)) {
    if (p.name == name) return &p.param->value;
  }
  return nullptr;
}

// relu kinks can defeat central differences when a preactivation sits within
// the step size of zero; the checker reports the margin so callers reseed
double robust_grad_err(Layer& net, const Tensor& x, std::uint64_t seed) {
  GradCheckResult r = check_gradients(net, x, seed);
  for (int retry = 0; retry < 3; ++retry) {
    if (r.max_rel_err < 1e-4 || r.min_relu_margin > 1e-4) break;
    r = check_gradients(net, x, seed + 101 + static_cast<std::uint64_t>(retry));
  }
  return r.max_rel_err;
}

}  // namespace

// ------------------------------------------------------------ convolution

TEST_CASE("conv2d forward matches the direct seven-loop oracle") {
  struct Geo {
    int in, out, k, stride, pad, groups, h, w;
    bool bias;
  };
  const Geo geos[] = {
      {3, 5, 3, 1, 1, 1, 8, 8, true},    // standard 3x3
      {4, 6, 5, 2, 2, 1, 9, 7, false},   // 5x5 stride 2, odd non-square
      {8, 4, 1, 1, 0, 1, 6, 6, true},    // pointwise
      {6, 6, 3, 1, 1, 6, 8, 8, false},   // depthwise
      {6, 6, 5, 2, 2, 6, 16, 16, true},  // depthwise stride 2
      {8, 4, 3, 1, 1, 2, 5, 5, true},    // grouped
      {4, 4, 3, 1, 0, 1, 6, 6, false},   // valid (no padding)
      {2, 3, 7, 1, 3, 1, 12, 12, false}, // wide kernel
  };
  Rng rng(2024);
  for (const Geo& g : geos) {
    CAPTURE(g.in, g.out, g.k, g.stride, g.pad, g.groups, g.h, g.w, g.bias);
    Conv2d conv(g.in, g.out, g.k, g.stride, g.pad, g.groups, g.bias);
    Rng init(rng.uniform_int(1, 1 << 20));
    init_params(conv, init);
    if (g.bias) {
      Tensor* b = find_param_mut(conv, "bias");
      for (long long i = 0; i < b->numel(); ++i) {
        (*b)[static_cast<std::size_t>(i)] = init.uniform(-0.5, 0.5);
      }
    }
    const Tensor x = random_tensor({2, g.in, g.h, g.w}, rng);
    const Tensor got = conv.forward(x, Mode::eval);

    const Tensor* w = find_param(conv, "weight", false);
    const Tensor* b = g.bias ? find_param(conv, "bias", false) : nullptr;
    const oracle::ConvCount want =
        oracle::conv2d(x, *w, b != nullptr ? b->data() : nullptr, g.stride,
                       g.pad, g.groups);
    REQUIRE(got.same_shape(want.out));
    double worst = 0.0;
    for (long long i = 0; i < got.numel(); ++i) {
      worst = std::max(worst,
                       testutil::rel_err(got.data()[i], want.out.data()[i]));
    }
    REQUIRE(worst < 1e-12);

    // MAC accounting equals the multiplies the oracle actually performed
    std::vector<LayerDesc> descs;
    conv.describe({1, g.in, g.h, g.w}, descs);
    REQUIRE(descs.size() == 1);
    const Tensor x1 = random_tensor({1, g.in, g.h, g.w}, rng);
    const oracle::ConvCount counted =
        oracle::conv2d(x1, *w, nullptr, g.stride, g.pad, g.groups);
    REQUIRE(count_macs(conv, {1, g.in, g.h, g.w}) == counted.multiplies);
  }
}

TEST_CASE("conv2d gradients agree with finite differences") {
  struct Geo {
    int in, out, k, stride, pad, groups, h;
    bool bias;
  };
  const Geo geos[] = {
      {2, 3, 3, 1, 1, 1, 5, true},
      {3, 3, 3, 1, 1, 3, 6, false},  // depthwise
      {4, 2, 3, 2, 1, 2, 7, true},   // grouped, stride 2
      {3, 2, 1, 1, 0, 1, 4, true},   // pointwise
      {2, 2, 5, 1, 2, 2, 8, false},  // 5x5 paddable depthwise-ish grouping
  };
  Rng rng(77);
  for (const Geo& g : geos) {
    CAPTURE(g.in, g.out, g.k, g.stride, g.groups, g.h);
    Conv2d conv(g.in, g.out, g.k, g.stride, g.pad, g.groups, g.bias);
    Rng init(55 + static_cast<std::uint64_t>(g.k));
    init_params(conv, init);
    const Tensor x = random_tensor({2, g.in, g.h, g.h}, rng);
    REQUIRE(robust_grad_err(conv, x, 42) < 1e-4);
  }
}

// -------------------------------------------------------------- batchnorm

TEST_CASE("batchnorm normalizes with population statistics in train mode") {
  BatchNorm2d bn(2);
  // fresh running statistics: identity transform for eval
  for (const auto& b : collect_buffers(bn)) {
    if (b.name == "running_mean") REQUIRE((*b.tensor)[0] == 0.0);
    if (b.name == "running_var") REQUIRE((*b.tensor)[0] == 1.0);
  }
  Rng rng(9);
  const Tensor x = random_tensor({3, 2, 4, 4}, rng, -2.0, 5.0);
  const Tensor y = bn.forward(x, Mode::train);

  const long long m = 3 * 4 * 4;
  for (int c = 0; c < 2; ++c) {
    // gather the channel the slow way
    double mean = 0.0, var = 0.0, ymean = 0.0, yvar = 0.0;
    for (int n = 0; n < 3; ++n) {
      for (int h = 0; h < 4; ++h) {
        for (int w = 0; w < 4; ++w) {
          mean += x.at(n, c, h, w);
          ymean += y.at(n, c, h, w);
        }
      }
    }
    mean /= static_cast<double>(m);
    ymean /= static_cast<double>(m);
    for (int n = 0; n < 3; ++n) {
      for (int h = 0; h < 4; ++h) {
        for (int w = 0; w < 4; ++w) {
          var += (x.at(n, c, h, w) - mean) * (x.at(n, c, h, w) - mean);
          yvar += (y.at(n, c, h, w) - ymean) * (y.at(n, c, h, w) - ymean);
        }
      }
    }
    var /= static_cast<double>(m);
    yvar /= static_cast<double>(m);
    REQUIRE(ymean == Catch::Approx(0.0).margin(1e-12));
    // population variance of the output is var / (var + eps)
    REQUIRE(yvar == Catch::Approx(var / (var + 1e-5)).margin(1e-9));

    // running statistics blend with momentum 0.1 from the (0, 1) start
    for (const auto& b : collect_buffers(bn)) {
      const double v = (*b.tensor)[static_cast<std::size_t>(c)];
      if (b.name == "running_mean") {
        REQUIRE(v == Catch::Approx(0.1 * mean).margin(1e-12));
      } else {
        REQUIRE(v == Catch::Approx(0.9 + 0.1 * var).margin(1e-12));
      }
    }
  }
}

TEST_CASE("batchnorm eval mode applies the running statistics") {
  BatchNorm2d bn(3);
  Rng rng(10);
  // push the running stats somewhere non-trivial with two train passes
  bn.forward(random_tensor({4, 3, 3, 3}, rng, -1.0, 3.0), Mode::train);
  bn.forward(random_tensor({4, 3, 3, 3}, rng, 0.0, 2.0), Mode::train);
  std::vector<double> rm(3), rv(3);
  for (const auto& b : collect_buffers(bn)) {
    for (int c = 0; c < 3; ++c) {
      if (b.name == "running_mean") rm[static_cast<std::size_t>(c)] = (*b.tensor)[static_cast<std::size_t>(c)];
      if (b.name == "running_var") rv[static_cast<std::size_t>(c)] = (*b.tensor)[static_cast<std::size_t>(c)];
    }
  }
  const Tensor x = random_tensor({2, 3, 2, 2}, rng);
  const Tensor y = bn.forward(x, Mode::eval);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      for (int h = 0; h < 2; ++h) {
        for (int w = 0; w < 2; ++w) {
          const std::size_t ci = static_cast<std::size_t>(c);
          const double want =
              (x.at(n, c, h, w) - rm[ci]) / std::sqrt(rv[ci] + 1e-5);
          REQUIRE(y.at(n, c, h, w) == Catch::Approx(want).margin(1e-12));
        }
      }
    }
  }
  // eval passes must not move the running statistics
  for (const auto& b : collect_buffers(bn)) {
    for (int c = 0; c < 3; ++c) {
      const std::size_t ci = static_cast<std::size_t>(c);
      const double v = (*b.tensor)[ci];
      REQUIRE(v == (b.name == "running_mean" ? rm[ci] : rv[ci]));
    }
  }
}

TEST_CASE("batchnorm train-mode gradients") {
  Sequential net;
  net.add("conv", std::make_unique<Conv2d>(2, 3, 3, 1, 1, 1, false));
  net.add("bn", std::make_unique<BatchNorm2d>(3));
  Rng init(4);
  init_params(net, init);
  Rng rng(5);
  const Tensor x = random_tensor({2, 2, 5, 5}, rng);
  REQUIRE(robust_grad_err(net, x, 7) < 1e-4);
}

// ------------------------------------------------------------- activations

TEST_CASE("activation forward values match their formulas") {
  Rng rng(12);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng, -3.0, 3.0);
  Activation relu(Act::relu), swish(Act::swish), sigmoid(Act::sigmoid);
  const Tensor yr = relu.forward(x, Mode::eval);
  const Tensor ys = swish.forward(x, Mode::eval);
  const Tensor yg = sigmoid.forward(x, Mode::eval);
  for (long long i = 0; i < x.numel(); ++i) {
    const double v = x.data()[i];
    const double sig = 1.0 / (1.0 + std::exp(-v));
    REQUIRE(yr.data()[i] == (v > 0.0 ? v : 0.0));
    REQUIRE(testutil::rel_err(ys.data()[i], v * sig) < 1e-12);
    REQUIRE(testutil::rel_err(yg.data()[i], sig) < 1e-12);
  }
}

TEST_CASE("activation gradients") {
  for (Act a : {Act::relu, Act::swish, Act::sigmoid}) {
    CAPTURE(act_name(a));
    Sequential net;
    net.add("conv", std::make_unique<Conv2d>(2, 2, 3, 1, 1, 1, true));
    net.add("act", std::make_unique<Activation>(a));
    Rng init(21);
    init_params(net, init);
    Rng rng(22);
    const Tensor x = random_tensor({2, 2, 4, 4}, rng);
    REQUIRE(robust_grad_err(net, x, 23) < 1e-4);
  }
}

TEST_CASE("relu probe records the smallest preactivation magnitude") {
  Activation relu(Act::relu);
  Tensor x({1, 1, 2, 2});
  x.data()[0] = -0.5;
  x.data()[1] = 0.003;
  x.data()[2] = 2.0;
  x.data()[3] = -0.001;
  ReluProbe& probe = relu_probe();
  probe.enabled = true;
  probe.min_abs = std::numeric_limits<double>::infinity();
  relu.forward(x, Mode::eval);
  probe.enabled = false;
  REQUIRE(probe.min_abs == 0.001);
}

// ------------------------------------------------------ pool, dense, SE

TEST_CASE("global average pool means over the spatial plane") {
  GlobalAvgPool pool;
  Rng rng(31);
  const Tensor x = random_tensor({2, 3, 4, 5}, rng);
  const Tensor y = pool.forward(x, Mode::eval);
  REQUIRE(y.dim(2) == 1);
  REQUIRE(y.dim(3) == 1);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int h = 0; h < 4; ++h) {
        for (int w = 0; w < 5; ++w) s += x.at(n, c, h, w);
      }
      REQUIRE(y.at(n, c, 0, 0) == Catch::Approx(s / 20.0).margin(1e-12));
    }
  }
  GradCheckResult r = check_gradients(pool, x, 3);
  REQUIRE(r.max_rel_err < 1e-4);
}

TEST_CASE("dense layer is an affine map over flattened features") {
  Dense fc(3, 2, true);
  Rng init(41);
  init_params(fc, init);
  Tensor* b = find_param_mut(fc, "bias");
  (*b)[0] = 0.3;
  (*b)[1] = -0.2;
  const Tensor* w = find_param(fc, "weight", false);  // {2, 3, 1, 1}
  Rng rng(42);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor y = fc.forward(x, Mode::eval);
  REQUIRE(y.rank() == 2);
  REQUIRE(y.dim(0) == 4);
  REQUIRE(y.dim(1) == 2);
  for (int n = 0; n < 4; ++n) {
    for (int o = 0; o < 2; ++o) {
      double s = (*b)[static_cast<std::size_t>(o)];
      for (int i = 0; i < 3; ++i) {
        s += x.data()[n * 3 + i] * w->data()[w->idx4(o, i, 0, 0)];
      }
      REQUIRE(testutil::rel_err(y.data()[n * 2 + o], s) < 1e-12);
    }
  }
  // rank-4 single-pixel input is accepted and flattened
  const Tensor x4 = x.reshaped({4, 3, 1, 1});
  const Tensor y4 = fc.forward(x4, Mode::eval);
  for (long long i = 0; i < y.numel(); ++i) {
    REQUIRE(y4.data()[i] == y.data()[i]);
  }
  REQUIRE(robust_grad_err(fc, x, 43) < 1e-4);
}

TEST_CASE("squeeze-excitation gates each channel into (0, 1)") {
  SEBlock se(16);
  Rng init(51);
  init_params(se, init);
  // hidden width floors at 8: fc1 maps 16 -> 8
  const Tensor* w1 = find_param(se, "fc1.weight", false);
  REQUIRE(w1 != nullptr);
  REQUIRE(w1->dim(0) == 8);
  REQUIRE(w1->dim(1) == 16);
  SEBlock wide(48);
  std::vector<NamedParam> ps = collect_params(wide);
  REQUIRE(ps.front().param->value.dim(0) == 12);  // round(48 / 4)

  Rng rng(52);
  const Tensor x = random_tensor({2, 16, 3, 3}, rng, 0.1, 2.0);
  const Tensor y = se.forward(x, Mode::eval);
  REQUIRE(y.same_shape(x));
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 16; ++c) {
      // one gate per (sample, channel): y / x is constant over the plane
      const double g0 = y.at(n, c, 0, 0) / x.at(n, c, 0, 0);
      REQUIRE(g0 > 0.0);
      REQUIRE(g0 < 1.0);
      for (int h = 0; h < 3; ++h) {
        for (int w = 0; w < 3; ++w) {
          REQUIRE(y.at(n, c, h, w) / x.at(n, c, h, w) ==
                  Catch::Approx(g0).margin(1e-9));
        }
      }
    }
  }
  REQUIRE(robust_grad_err(se, x, 53) < 1e-4);
}

// ------------------------------------------------------- choice validation

TEST_CASE("choice tokens encode every axis") {
  BlockChoice c;
  REQUIRE(choice_token(c) == "k3-e2-d1-relu-dw-c100");
  c.kernel = 5;
  c.expand = 3;
  c.depth = 2;
  c.se = true;
  c.act = Act::swish;
  c.layer_type = LayerType::grouped;
  c.channel_scale = 0.5;
  REQUIRE(choice_token(c) == "k5-e3-d2-seswish-gr-c50");
}

TEST_CASE("choice validation rejects malformed axes") {
  BlockChoice c;
  REQUIRE_NOTHROW(validate_choice(c));
  SECTION("even kernel") {
    c.kernel = 4;
    REQUIRE_THROWS_WITH(validate_choice(c), ContainsSubstring("kernel"));
  }
  SECTION("zero expand") {
    c.expand = 0;
    REQUIRE_THROWS_WITH(validate_choice(c), ContainsSubstring("expand"));
  }
  SECTION("zero depth") {
    c.depth = 0;
    REQUIRE_THROWS_WITH(validate_choice(c), ContainsSubstring("depth"));
  }
  SECTION("non-positive scale") {
    c.channel_scale = 0.0;
    REQUIRE_THROWS_WITH(validate_choice(c), ContainsSubstring("scale"));
  }
  SECTION("attention axes move together") {
    c.se = true;  // swish must come with it
    REQUIRE_THROWS_AS(validate_choice(c), std::runtime_error);
    c.se = false;
    c.act = Act::swish;
    REQUIRE_THROWS_AS(validate_choice(c), std::runtime_error);
  }
}

TEST_CASE("width arithmetic rounds half up with a floor of eight") {
  REQUIRE(rounded_width(8.0, "w") == 8);
  REQUIRE(rounded_width(11.5, "w") == 12);
  REQUIRE(rounded_width(12.4, "w") == 12);
  REQUIRE(rounded_width(3.0, "w") == 8);  // floored
  REQUIRE_THROWS_WITH(rounded_width(0.4, "w"), ContainsSubstring("w"));

  BlockChoice c;
  c.expand = 3;
  c.channel_scale = 0.5;
  const BlockSlot slot{0, 16, 24, 1};
  REQUIRE(mid_width(c, slot) == 36);       // 24 * 0.5 * 3
  REQUIRE(interior_width(c, slot) == 12);  // 24 * 0.5
}

TEST_CASE("grouped convolutions always receive a divisor group count") {
  BlockChoice c;
  c.layer_type = LayerType::grouped;
  for (int width : {8, 12, 20, 36, 48, 56, 96}) {
    const int g = spatial_groups(c, width);
    CAPTURE(width, g);
    REQUIRE(g >= 1);
    REQUIRE(width % g == 0);
    REQUIRE(g <= std::max(1, width / 8) );
  }
  c.layer_type = LayerType::depthwise;
  REQUIRE(spatial_groups(c, 48) == 48);
}

// --------------------------------------------------------- inverted units

TEST_CASE("ir unit reduces to the identity when its projection is silenced") {
  BlockChoice c;
  c.se = true;
  c.act = Act::swish;
  validate_choice(c);
  IRUnit unit(12, 24, 12, 1, c);
  Rng init(61);
  init_params(unit, init);
  Tensor* proj = find_param_mut(unit, "project.weight");
  REQUIRE(proj != nullptr);
  proj->fill(0.0);
  Rng rng(62);
  const Tensor x = random_tensor({2, 12, 4, 4}, rng);
  const Tensor y = unit.forward(x, Mode::eval);  // fresh running stats
  for (long long i = 0; i < x.numel(); ++i) {
    REQUIRE(y.data()[i] == x.data()[i]);
  }
}

TEST_CASE("ir unit without the residual collapses to zero when silenced") {
  BlockChoice c;
  IRUnit strided(12, 24, 12, 2, c);   // stride breaks the skip
  IRUnit widened(12, 24, 16, 1, c);   // width change breaks the skip
  Rng init(63);
  init_params(strided, init);
  init_params(widened, init);
  for (IRUnit* u : {&strided, &widened}) {
    find_param_mut(*u, "project.weight")->fill(0.0);
    Rng rng(64);
    const Tensor x = random_tensor({1, 12, 6, 6}, rng);
    const Tensor y = u->forward(x, Mode::eval);
    for (long long i = 0; i < y.numel(); ++i) {
      REQUIRE(y.data()[i] == 0.0);
    }
  }
}

TEST_CASE("ir unit gradients, with and without attention") {
  for (bool se : {false, true}) {
    CAPTURE(se);
    BlockChoice c;
    if (se) {
      c.se = true;
      c.act = Act::swish;
    }
    c.kernel = 3;
    IRUnit unit(8, 16, 10, 1, c);
    Rng init(se ? 65 : 66);
    init_params(unit, init);
    Rng rng(67);
    const Tensor x = random_tensor({2, 8, 4, 4}, rng);
    REQUIRE(robust_grad_err(unit, x, 68) < 1e-4);
  }
}

// ----------------------------------------------------------------- blocks

TEST_CASE("block stacks units with the stride on the first") {
  BlockChoice c;
  c.depth = 3;
  c.kernel = 5;
  const BlockSlot slot{1, 24, 32, 2};
  Block b(c, slot);
  REQUIRE(b.out_shape({1, 24, 8, 8}) == std::vector<int>{1, 32, 4, 4});
  std::set<std::string> prefixes;
  for (const auto& p : collect_params(b)) {
    prefixes.insert(p.name.substr(0, p.name.find('.')));
  }
  REQUIRE(prefixes == std::set<std::string>{"unit0", "unit1", "unit2"});

  Rng init(71);
  init_params(b, init);
  Rng rng(72);
  const Tensor x = random_tensor({2, 24, 8, 8}, rng);
  REQUIRE(b.forward(x, Mode::train).same_shape(Tensor({2, 32, 4, 4})));
  REQUIRE(robust_grad_err(b, x, 73) < 1e-4);
}

TEST_CASE("block gradient suite across layer types") {
  const BlockSlot slot{0, 16, 24, 1};
  for (LayerType lt : {LayerType::depthwise, LayerType::grouped}) {
    BlockChoice c;
    c.layer_type = lt;
    c.depth = 2;
    Block b(c, slot);
    Rng init(81);
    init_params(b, init);
    Rng rng(82);
    const Tensor x = random_tensor({2, 16, 6, 6}, rng);
    CAPTURE(choice_token(c));
    REQUIRE(robust_grad_err(b, x, 83) < 1e-4);
  }
}

// ------------------------------------------------------------ arch models

TEST_CASE("reference model shape, parameter, and MAC pins") {
  const ModelPreset& p = desk_ref_3();
  auto model = build_model(p, p.reference_choices(), 0);
  REQUIRE(count_params(*model) == 225088);
  REQUIRE(model_macs(p, p.reference_choices()) == 2448640);

  Rng rng(91);
  const Tensor x = random_tensor({4, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor logits = model->forward(x, Mode::eval);
  REQUIRE(logits.rank() == 2);
  REQUIRE(logits.dim(0) == 4);
  REQUIRE(logits.dim(1) == 8);

  const ModelPreset& p5 = desk_ref_5();
  REQUIRE(p5.slots.size() == 5);
  REQUIRE(preset_by_name("desk-ref-3").name == p.name);
  REQUIRE_THROWS_WITH(preset_by_name("desk-ref-9"),
                      ContainsSubstring("desk-ref-9"));
}

TEST_CASE("count_params equals the snapshot record oracle") {
  const ModelPreset& p = desk_ref_3();
  auto ref = build_model(p, p.reference_choices(), 0);
  REQUIRE(count_params(*ref) == oracle::snapshot_param_count(snapshot_bytes(*ref)));

  const SpaceFile sf =
      load_space_file(std::string(DONNA_SOURCE_DIR) + "/configs/desk3_space.txt");
  Rng rng(92);
  for (int i = 0; i < 5; ++i) {
    const Genome g = sf.root.sample(rng);
    auto m = build_model(p, sf.root.choices_of(g), 1);
    CAPTURE(encode_genome(g));
    REQUIRE(count_params(*m) == oracle::snapshot_param_count(snapshot_bytes(*m)));
  }
}

TEST_CASE("count_macs equals the oracle's runtime multiply count") {
  const ModelPreset& p = desk_ref_3();
  const SpaceFile sf =
      load_space_file(std::string(DONNA_SOURCE_DIR) + "/configs/desk3_space.txt");
  Rng rng(93);
  for (int i = 0; i < 3; ++i) {
    const Genome g = sf.root.sample(rng);
    ArchModel m(p, sf.root.choices_of(g));
    std::vector<LayerDesc> descs;
    m.describe({1, 3, 16, 16}, descs);
    long long counted = 0;
    Rng data(94);
    for (const LayerDesc& d : descs) {
      if (d.kind != "conv") continue;
      const Tensor x = random_tensor(d.in_shape, data);
      Tensor w({d.out_ch, d.in_ch / d.groups, d.kernel, d.kernel});
      counted += oracle::conv2d(x, w, nullptr, d.stride, d.pad, d.groups)
                     .multiplies;
    }
    CAPTURE(encode_genome(g));
    REQUIRE(count_macs(m, {1, 3, 16, 16}) == counted);
    REQUIRE(model_macs(p, sf.root.choices_of(g)) == counted);
  }
}

TEST_CASE("block_io exposes a block's input and output feature maps") {
  const ModelPreset& p = desk_ref_3();
  auto model = build_model(p, p.reference_choices(), 3);
  Rng rng(95);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
  for (int pos = 0; pos < 3; ++pos) {
    auto [in, out] = model->block_io(x, pos);
    const BlockSlot& slot = p.slots[static_cast<std::size_t>(pos)];
    const int hw_in = p.slot_input_hw(pos);
    REQUIRE(in.dim(1) == slot.in_channels);
    REQUIRE(in.dim(2) == hw_in);
    REQUIRE(out.dim(1) == slot.out_channels);
    REQUIRE(out.dim(2) == hw_in / slot.stride);
  }
  REQUIRE_THROWS_WITH(model->block_io(x, 3), ContainsSubstring("position"));
}

TEST_CASE("model initialization is seed-deterministic") {
  const ModelPreset& p = desk_ref_3();
  auto a = build_model(p, p.reference_choices(), 17);
  auto b = build_model(p, p.reference_choices(), 17);
  auto c = build_model(p, p.reference_choices(), 18);
  REQUIRE(snapshot_bytes(*a) == snapshot_bytes(*b));
  REQUIRE(snapshot_bytes(*a) != snapshot_bytes(*c));
}

TEST_CASE("full model gradients stay tight") {
  // small custom preset to keep the finite-difference sweep quick
  ModelPreset p = desk_ref_3();
  p.slots = {{0, 16, 24, 2}};
  p.reference_choice.depth = 1;
  auto model = build_model(p, p.reference_choices(), 7);
  Rng rng(96);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
  REQUIRE(robust_grad_err(*model, x, 97) < 1e-4);
}
