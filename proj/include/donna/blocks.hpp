// blocks.hpp: mobile inverted-bottleneck block grammar and model assembly.
//
// A model is a fixed stem, N block slots with fixed channel counts and
// strides, and a fixed head. Each slot is filled by a block choice: kernel
// size, expansion ratio, unit depth, attention/activation pairing,
// spatial-convolution grouping, and a channel-width scale. SE attention and
// swish always travel together, so the attention axis has exactly two
// legal settings: plain relu, or SE with swish.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "donna/layers.hpp"

namespace donna {

enum class LayerType { depthwise, grouped };

struct BlockChoice {
  int kernel = 3;
  int expand = 2;
  int depth = 1;
  bool se = false;
  Act act = Act::relu;
  LayerType layer_type = LayerType::depthwise;
  double channel_scale = 1.0;
};

struct BlockSlot {
  int position = 0;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
};

inline std::string choice_token(const BlockChoice& c) {
  std::string s = "k" + std::to_string(c.kernel) + "-e" +
                  std::to_string(c.expand) + "-d" + std::to_string(c.depth);
  s += c.se ? "-seswish" : "-relu";
  s += c.layer_type == LayerType::depthwise ? "-dw" : "-gr";
  s += "-c" + std::to_string(round_half_up(c.channel_scale * 100.0));
  return s;
}

inline void validate_choice(const BlockChoice& c) {
  check(c.kernel >= 1 && c.kernel % 2 == 1,
        "block choice: kernel must be odd and positive, got " +
            std::to_string(c.kernel));
  check(c.expand >= 1, "block choice: expansion ratio must be >= 1");
  check(c.depth >= 1, "block choice: depth must be >= 1");
  check(c.channel_scale > 0.0, "block choice: channel scale must be positive");
  const bool coupled = (c.se && c.act == Act::swish) ||
                       (!c.se && c.act == Act::relu);
  check(coupled,
        "block choice: attention and activation are a coupled axis, legal "
        "settings are relu without SE or swish with SE");
}

inline void validate_slot(const BlockSlot& s) {
  check(s.in_channels > 0 && s.out_channels > 0,
        "block slot: channel counts must be positive");
  check(s.stride == 1 || s.stride == 2, "block slot: stride must be 1 or 2");
}

// round-half-up width with a floor of 8; widths that round below 1 mark a
// degenerate choice/slot pairing and are rejected outright
inline int rounded_width(double v, const std::string& what) {
  const int r = round_half_up(v);
  check(r >= 1, "block choice: " + what + " rounds to zero channels");
  return std::max(8, r);
}

inline int mid_width(const BlockChoice& c, const BlockSlot& s) {
  return rounded_width(
      static_cast<double>(s.out_channels) * c.channel_scale * c.expand,
      "expanded width");
}

inline int interior_width(const BlockChoice& c, const BlockSlot& s) {
  return rounded_width(
      static_cast<double>(s.out_channels) * c.channel_scale,
      "interior width");
}

// grouped convolutions target a group width of 8 channels; if that group
// count does not divide the width, it is decremented until it does
inline int spatial_groups(const BlockChoice& c, int width) {
  if (c.layer_type == LayerType::depthwise) return width;
  int g = std::max(1, width / 8);
  while (width % g != 0) --g;
  return g;
}

// -------------------------------------------------- inverted residual unit

class IRUnit : public Layer {
 public:
  IRUnit(int in_ch, int mid_ch, int out_ch, int stride, const BlockChoice& c)
      : expand_(in_ch, mid_ch, 1, 1, 0, 1, false),
        bn1_(mid_ch),
        act1_(c.act),
        spatial_(mid_ch, mid_ch, c.kernel, stride, c.kernel / 2,
                 spatial_groups(c, mid_ch), false),
        bn2_(mid_ch),
        act2_(c.act),
        project_(mid_ch, out_ch, 1, 1, 0, 1, false),
        bn3_(out_ch),
        residual_(in_ch == out_ch && stride == 1) {
    if (c.se) se_ = std::make_unique<SEBlock>(mid_ch);
  }

  Tensor forward(Tensor x, Mode mode) override {
    // x lives on inside expand_ as its saved input, so the residual skip
    // can read it back without this unit keeping a copy
    Tensor t = act1_.forward(
        bn1_.forward(expand_.forward(std::move(x), mode), mode), mode);
    t = act2_.forward(
        bn2_.forward(spatial_.forward(std::move(t), mode), mode), mode);
    if (se_) t = se_->forward(std::move(t), mode);
    t = bn3_.forward(project_.forward(std::move(t), mode), mode);
    if (residual_) {
      double* tp = t.data();
      const double* xp = expand_.saved_input().data();
      for (long long i = 0; i < t.numel(); ++i) tp[i] += xp[i];
    }
    return t;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor d = project_.backward(bn3_.backward(dy));
    if (se_) d = se_->backward(d);
    d = spatial_.backward(bn2_.backward(act2_.backward(d)));
    d = expand_.backward(bn1_.backward(act1_.backward(d)));
    if (residual_) {
      double* dp = d.data();
      const double* up = dy.data();
      for (long long i = 0; i < d.numel(); ++i) dp[i] += up[i];
    }
    return d;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return bn3_.out_shape(project_.out_shape(
        spatial_.out_shape(expand_.out_shape(in))));
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& ps,
               std::vector<NamedBuffer>& bs) override {
    expand_.collect(prefix + "expand.", ps, bs);
    bn1_.collect(prefix + "bn1.", ps, bs);
    spatial_.collect(prefix + "spatial.", ps, bs);
    bn2_.collect(prefix + "bn2.", ps, bs);
    if (se_) se_->collect(prefix + "se.", ps, bs);
    project_.collect(prefix + "project.", ps, bs);
    bn3_.collect(prefix + "bn3.", ps, bs);
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    std::vector<int> cur = in;
    expand_.describe(cur, sink);
    cur = expand_.out_shape(cur);
    bn1_.describe(cur, sink);
    act1_.describe(cur, sink);
    spatial_.describe(cur, sink);
    cur = spatial_.out_shape(cur);
    bn2_.describe(cur, sink);
    act2_.describe(cur, sink);
    if (se_) se_->describe(cur, sink);
    project_.describe(cur, sink);
    cur = project_.out_shape(cur);
    bn3_.describe(cur, sink);
  }

  Conv2d& expand_conv() { return expand_; }
  bool residual() const { return residual_; }

 private:
  Conv2d expand_;
  BatchNorm2d bn1_;
  Activation act1_;
  Conv2d spatial_;
  BatchNorm2d bn2_;
  Activation act2_;
  std::unique_ptr<SEBlock> se_;
  Conv2d project_;
  BatchNorm2d bn3_;
  bool residual_;
};

// ----------------------------------------------------------------- Block

class Block : public Layer {
 public:
  Block(const BlockChoice& c, const BlockSlot& s) : choice_(c), slot_(s) {
    validate_choice(c);
    validate_slot(s);
    const int mid = mid_width(c, s);
    const int interior = interior_width(c, s);
    int in_ch = s.in_channels;
    for (int u = 0; u < c.depth; ++u) {
      const bool last = (u == c.depth - 1);
      const int out_ch = last ? s.out_channels : interior;
      const int stride = (u == 0) ? s.stride : 1;
      units_.push_back(
          std::make_unique<IRUnit>(in_ch, mid, out_ch, stride, c));
      in_ch = out_ch;
    }
  }

  Tensor forward(Tensor x, Mode mode) override {
    Tensor cur = std::move(x);
    for (auto& u : units_) cur = u->forward(std::move(cur), mode);
    return cur;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor cur = dy;
    for (auto it = units_.rbegin(); it != units_.rend(); ++it) {
      cur = (*it)->backward(cur);
    }
    return cur;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    std::vector<int> cur = in;
    for (const auto& u : units_) cur = u->out_shape(cur);
    return cur;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& ps,
               std::vector<NamedBuffer>& bs) override {
    for (std::size_t i = 0; i < units_.size(); ++i) {
      units_[i]->collect(prefix + "unit" + std::to_string(i) + ".", ps, bs);
    }
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    std::vector<int> cur = in;
    for (const auto& u : units_) {
      u->describe(cur, sink);
      cur = u->out_shape(cur);
    }
  }

  // during teacher-forced training the block input is a constant, so the
  // input gradient of the first convolution is never consumed
  void mark_input_constant() {
    units_.front()->expand_conv().needs_input_grad = false;
  }

  const BlockChoice& choice() const { return choice_; }
  const BlockSlot& slot() const { return slot_; }
  std::size_t unit_count() const { return units_.size(); }

 private:
  BlockChoice choice_;
  BlockSlot slot_;
  std::vector<std::unique_ptr<IRUnit>> units_;
};

inline std::unique_ptr<Block> build_block(const BlockChoice& c,
                                          const BlockSlot& s) {
  return std::make_unique<Block>(c, s);
}

// ----------------------------------------------------------- model preset

struct ModelPreset {
  std::string name;
  int input_channels = 3;
  int input_hw = 16;
  int num_classes = 8;
  int stem_out = 16;
  int head_mid = 64;
  std::vector<BlockSlot> slots;
  BlockChoice reference_choice;  // same choice in every slot

  std::vector<BlockChoice> reference_choices() const {
    return std::vector<BlockChoice>(slots.size(), reference_choice);
  }

  // spatial edge length at the input of a slot
  int slot_input_hw(int position) const {
    int hw = input_hw / 2;  // stem stride
    for (int i = 0; i < position; ++i) {
      if (slots[static_cast<std::size_t>(i)].stride == 2) hw /= 2;
    }
    return hw;
  }
};

inline ModelPreset desk_ref_3() {
  ModelPreset p;
  p.name = "desk-ref-3";
  p.slots = {{0, 16, 24, 1}, {1, 24, 32, 2}, {2, 32, 48, 2}};
  p.reference_choice = {5, 4, 3, true, Act::swish, LayerType::depthwise, 1.0};
  return p;
}

inline ModelPreset desk_ref_5() {
  ModelPreset p;
  p.name = "desk-ref-5";
  p.head_mid = 128;
  p.slots = {{0, 16, 24, 1},
             {1, 24, 32, 2},
             {2, 32, 48, 2},
             {3, 48, 64, 1},
             {4, 64, 96, 2}};
  p.reference_choice = {7, 6, 4, true, Act::swish, LayerType::depthwise, 1.0};
  return p;
}

inline ModelPreset preset_by_name(const std::string& name) {
  if (name == "desk-ref-3") return desk_ref_3();
  if (name == "desk-ref-5") return desk_ref_5();
  fail("unknown model preset: " + name);
}

// ------------------------------------------------------------- ArchModel
//
// stem (3x3 stride-2 conv, batchnorm, swish), one block per slot, head
// (1x1 conv, batchnorm, swish, global pool, classifier).

class ArchModel : public Layer {
 public:
  ArchModel(const ModelPreset& preset,
            const std::vector<BlockChoice>& choices)
      : preset_(preset) {
    check(choices.size() == preset.slots.size(),
          "model: got " + std::to_string(choices.size()) +
              " block choices for " + std::to_string(preset.slots.size()) +
              " slots");
    stem_.add("conv", std::make_unique<Conv2d>(preset.input_channels,
                                               preset.stem_out, 3, 2, 1, 1,
                                               false));
    stem_.add("bn", std::make_unique<BatchNorm2d>(preset.stem_out));
    stem_.add("act", std::make_unique<Activation>(Act::swish));
    for (std::size_t i = 0; i < preset.slots.size(); ++i) {
      check(preset.slots[i].in_channels ==
                (i == 0 ? preset.stem_out
                        : preset.slots[i - 1].out_channels),
            "model: slot channel chain is inconsistent at position " +
                std::to_string(i));
      blocks_.push_back(build_block(choices[i], preset.slots[i]));
    }
    const int trunk_out = preset.slots.back().out_channels;
    head_.add("conv", std::make_unique<Conv2d>(trunk_out, preset.head_mid, 1,
                                               1, 0, 1, false));
    head_.add("bn", std::make_unique<BatchNorm2d>(preset.head_mid));
    head_.add("act", std::make_unique<Activation>(Act::swish));
    head_.add("pool", std::make_unique<GlobalAvgPool>());
    head_.add("classifier",
              std::make_unique<Dense>(preset.head_mid, preset.num_classes,
                                      true));
  }

  Tensor forward(Tensor x, Mode mode) override {
    Tensor cur = stem_.forward(std::move(x), mode);
    for (auto& b : blocks_) cur = b->forward(std::move(cur), mode);
    return head_.forward(std::move(cur), mode);
  }

  Tensor backward(const Tensor& dy) override {
    Tensor cur = head_.backward(dy);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      cur = (*it)->backward(cur);
    }
    return stem_.backward(cur);
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    std::vector<int> cur = stem_.out_shape(in);
    for (const auto& b : blocks_) cur = b->out_shape(cur);
    return head_.out_shape(cur);
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& ps,
               std::vector<NamedBuffer>& bs) override {
    stem_.collect(prefix + "stem.", ps, bs);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i]->collect(prefix + "block" + std::to_string(i) + ".", ps, bs);
    }
    head_.collect(prefix + "head.", ps, bs);
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    std::vector<int> cur = in;
    stem_.describe(cur, sink);
    cur = stem_.out_shape(cur);
    for (const auto& b : blocks_) {
      b->describe(cur, sink);
      cur = b->out_shape(cur);
    }
    head_.describe(cur, sink);
  }

  // eval-mode forward up to block `position`, returning that block's input
  // and output feature maps
  std::pair<Tensor, Tensor> block_io(const Tensor& x, int position) {
    check(position >= 0 &&
              position < static_cast<int>(blocks_.size()),
          "block_io: position out of range");
    Tensor cur = stem_.forward(x, Mode::eval);
    for (int i = 0; i < position; ++i) {
      cur = blocks_[static_cast<std::size_t>(i)]->forward(std::move(cur),
                                                          Mode::eval);
    }
    Tensor out =
        blocks_[static_cast<std::size_t>(position)]->forward(cur, Mode::eval);
    return {cur, out};
  }

  const ModelPreset& preset() const { return preset_; }
  int block_count() const { return static_cast<int>(blocks_.size()); }
  Block& block(int i) { return *blocks_[static_cast<std::size_t>(i)]; }
  Sequential& stem() { return stem_; }
  Sequential& head() { return head_; }

  std::vector<int> input_shape(int batch) const {
    return {batch, preset_.input_channels, preset_.input_hw, preset_.input_hw};
  }

  void mark_input_constant() {
    auto* conv = dynamic_cast<Conv2d*>(stem_.child(0));
    conv->needs_input_grad = false;
  }

 private:
  ModelPreset preset_;
  Sequential stem_;
  std::vector<std::unique_ptr<Block>> blocks_;
  Sequential head_;
};

inline std::unique_ptr<ArchModel> build_model(
    const ModelPreset& preset, const std::vector<BlockChoice>& choices,
    std::uint64_t seed) {
  auto m = std::make_unique<ArchModel>(preset, choices);
  Rng rng(seed);
  init_params(*m, rng);
  return m;
}

inline long long model_macs(const ModelPreset& preset,
                            const std::vector<BlockChoice>& choices) {
  ArchModel m(preset, choices);
  return count_macs(m, {1, preset.input_channels, preset.input_hw,
                        preset.input_hw});
}

}  // namespace donna
