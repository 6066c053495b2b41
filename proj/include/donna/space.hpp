// space.hpp: search spaces, genomes, constraints.
//
// A search space is a model preset plus a grid of block choices. Choice
// indices are *root* indices: they are assigned once from the full grid and
// never renumbered, so a constrained subspace keeps the parent's indices
// (and can therefore reuse the parent's trained block library). The space
// identity hash covers the preset, slots, and root grid — not the name and
// not any constraint — for the same reason.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "donna/blocks.hpp"
#include "donna/config.hpp"
#include "donna/rng.hpp"

namespace donna {

struct Genome {
  std::vector<int> idx;

  bool operator==(const Genome& o) const { return idx == o.idx; }
  bool operator<(const Genome& o) const { return idx < o.idx; }
};

inline std::string encode_genome(const Genome& g) {
  std::string s = "v1:";
  for (std::size_t i = 0; i < g.idx.size(); ++i) {
    if (i) s += "-";
    s += std::to_string(g.idx[i]);
  }
  return s;
}

inline Genome decode_genome(const std::string& s) {
  check(s.rfind("v1:", 0) == 0,
        "genome: expected 'v1:' prefix in '" + s + "'");
  Genome g;
  for (const std::string& tok : split(s.substr(3), '-')) {
    check(!tok.empty(), "genome: empty index in '" + s + "'");
    for (char c : tok) {
      check(c >= '0' && c <= '9', "genome: bad index '" + tok + "' in '" + s + "'");
    }
    g.idx.push_back(std::stoi(tok));
  }
  check(!g.idx.empty(), "genome: no indices in '" + s + "'");
  return g;
}

class SearchSpace {
 public:
  std::string name;
  ModelPreset preset;
  std::vector<BlockChoice> root_choices;   // shared across positions
  std::vector<std::vector<int>> allowed;   // per position, sorted root indices

  int positions() const { return static_cast<int>(preset.slots.size()); }
  int root_size() const { return static_cast<int>(root_choices.size()); }

  const BlockChoice& choice(int root_idx) const {
    check(root_idx >= 0 && root_idx < root_size(),
          "space: choice index " + std::to_string(root_idx) +
              " outside root grid of size " + std::to_string(root_size()));
    return root_choices[static_cast<std::size_t>(root_idx)];
  }

  bool is_allowed(int position, int root_idx) const {
    const auto& a = allowed[static_cast<std::size_t>(position)];
    return std::binary_search(a.begin(), a.end(), root_idx);
  }

  void require_valid(const Genome& g) const {
    check(static_cast<int>(g.idx.size()) == positions(),
          "genome " + encode_genome(g) + " has " +
              std::to_string(g.idx.size()) + " positions, space '" + name +
              "' has " + std::to_string(positions()));
    for (int p = 0; p < positions(); ++p) {
      const int i = g.idx[static_cast<std::size_t>(p)];
      check(i >= 0 && i < root_size(),
            "genome " + encode_genome(g) + ": index " + std::to_string(i) +
                " at position " + std::to_string(p) + " outside root grid");
      check(is_allowed(p, i),
            "genome " + encode_genome(g) + ": choice " + std::to_string(i) +
                " is not allowed at position " + std::to_string(p) +
                " in space '" + name + "'");
    }
  }

  u128 cardinality() const {
    u128 total = 1;
    for (const auto& a : allowed) {
      total = u128_checked_mul(total, a.size());
    }
    return total;
  }

  Genome sample(Rng& rng) const {
    Genome g;
    for (const auto& a : allowed) {
      g.idx.push_back(a[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(a.size()) - 1))]);
    }
    return g;
  }

  std::vector<BlockChoice> choices_of(const Genome& g) const {
    require_valid(g);
    std::vector<BlockChoice> out;
    for (int i : g.idx) out.push_back(choice(i));
    return out;
  }

  long long genome_macs(const Genome& g) const {
    return model_macs(preset, choices_of(g));
  }

  // identity of the root grid; stable under constraints and renaming
  std::string space_hash() const {
    std::string s = "space-v1|preset=" + preset.name + "|slots=";
    for (const auto& sl : preset.slots) {
      s += std::to_string(sl.position) + ":" + std::to_string(sl.in_channels) +
           ":" + std::to_string(sl.out_channels) + ":" +
           std::to_string(sl.stride) + ",";
    }
    s += "|choices=";
    for (const auto& c : root_choices) s += choice_token(c) + ",";
    return hex64(fnv1a(s));
  }
};

// grid axes in nesting order: kernel, expand, depth, attention, layer type,
// channel scale (innermost)
struct SpaceGrid {
  std::vector<int> kernels{3};
  std::vector<int> expands{2};
  std::vector<int> depths{1};
  std::vector<bool> attention{false};  // false = relu, true = SE + swish
  std::vector<LayerType> layer_types{LayerType::depthwise};
  std::vector<double> channel_scales{1.0};
};

inline std::vector<BlockChoice> enumerate_grid(const SpaceGrid& g) {
  std::vector<BlockChoice> out;
  for (int k : g.kernels) {
    for (int e : g.expands) {
      for (int d : g.depths) {
        for (bool se : g.attention) {
          for (LayerType lt : g.layer_types) {
            for (double s : g.channel_scales) {
              BlockChoice c;
              c.kernel = k;
              c.expand = e;
              c.depth = d;
              c.se = se;
              c.act = se ? Act::swish : Act::relu;
              c.layer_type = lt;
              c.channel_scale = s;
              validate_choice(c);
              out.push_back(c);
            }
          }
        }
      }
    }
  }
  check(!out.empty(), "space: empty choice grid");
  return out;
}

inline SearchSpace make_space(const std::string& name,
                              const ModelPreset& preset,
                              const SpaceGrid& grid) {
  SearchSpace s;
  s.name = name;
  s.preset = preset;
  s.root_choices = enumerate_grid(grid);
  std::vector<int> all;
  for (int i = 0; i < static_cast<int>(s.root_choices.size()); ++i) {
    all.push_back(i);
  }
  s.allowed.assign(preset.slots.size(), all);
  return s;
}

// ------------------------------------------------------------ constraints

struct AxisSets {
  std::vector<int> kernels, expands, depths;
  std::vector<bool> attention;
  std::vector<LayerType> layer_types;
  std::vector<double> channel_scales;

  bool empty() const {
    return kernels.empty() && expands.empty() && depths.empty() &&
           attention.empty() && layer_types.empty() && channel_scales.empty();
  }
};

struct ConstraintSpec {
  std::string name;
  bool compression = false;  // keep only choices cheaper than the reference
  AxisSets global;
  std::map<int, AxisSets> per_position;
};

namespace detail {

template <typename T>
bool axis_ok(const std::vector<T>& allowed, T v) {
  if (allowed.empty()) return true;
  for (const T& a : allowed) {
    if (a == v) return true;
  }
  return false;
}

inline bool scale_ok(const std::vector<double>& allowed, double v) {
  if (allowed.empty()) return true;
  for (double a : allowed) {
    if (std::abs(a - v) < 1e-9) return true;
  }
  return false;
}

inline bool choice_passes(const BlockChoice& c, const AxisSets& s) {
  return axis_ok(s.kernels, c.kernel) && axis_ok(s.expands, c.expand) &&
         axis_ok(s.depths, c.depth) && axis_ok(s.attention, c.se) &&
         axis_ok(s.layer_types, c.layer_type) &&
         scale_ok(s.channel_scales, c.channel_scale);
}

}  // namespace detail

// Filters the parent's allowed sets in place; root indices are preserved.
// Compression keeps only choices with strictly fewer MACs than the
// preset's reference choice at the same slot.
inline SearchSpace apply_constraint(const SearchSpace& parent,
                                    const ConstraintSpec& spec) {
  SearchSpace out = parent;
  out.name = parent.name + "/" + spec.name;
  for (int p = 0; p < parent.positions(); ++p) {
    const AxisSets* axes = &spec.global;
    auto it = spec.per_position.find(p);
    if (it != spec.per_position.end()) axes = &it->second;
    const BlockSlot& slot = parent.preset.slots[static_cast<std::size_t>(p)];
    long long ref_macs = 0;
    if (spec.compression) {
      Block ref_block(parent.preset.reference_choice, slot);
      const int hw = parent.preset.slot_input_hw(p);
      ref_macs = count_macs(ref_block, {1, slot.in_channels, hw, hw});
    }
    std::vector<int> kept;
    for (int i : parent.allowed[static_cast<std::size_t>(p)]) {
      const BlockChoice& c = parent.choice(i);
      if (!detail::choice_passes(c, *axes)) continue;
      if (spec.compression) {
        Block b(c, slot);
        const int hw = parent.preset.slot_input_hw(p);
        if (count_macs(b, {1, slot.in_channels, hw, hw}) >= ref_macs) continue;
      }
      kept.push_back(i);
    }
    check(!kept.empty(), "constraint '" + spec.name +
                             "' leaves no choices at position " +
                             std::to_string(p));
    out.allowed[static_cast<std::size_t>(p)] = kept;
  }
  return out;
}

// ------------------------------------------------------------- space files

namespace detail {

inline bool is_axis_field(const std::string& f) {
  return f == "kernels" || f == "expands" || f == "depths" ||
         f == "attention" || f == "layer_types" || f == "channel_scales";
}

inline void apply_axis_field(AxisSets& s, const std::string& field,
                             const std::string& value) {
  std::vector<std::string> toks;
  for (const std::string& t : split(value, ' ')) {
    if (!trim(t).empty()) toks.push_back(trim(t));
  }
  check(!toks.empty(), "space file: empty value for '" + field + "'");
  if (field == "kernels") {
    for (const auto& t : toks) s.kernels.push_back(std::stoi(t));
  } else if (field == "expands") {
    for (const auto& t : toks) s.expands.push_back(std::stoi(t));
  } else if (field == "depths") {
    for (const auto& t : toks) s.depths.push_back(std::stoi(t));
  } else if (field == "attention") {
    for (const auto& t : toks) {
      if (t == "relu") {
        s.attention.push_back(false);
      } else if (t == "seswish") {
        s.attention.push_back(true);
      } else {
        fail("space file: unknown attention setting '" + t +
             "' (expected relu or seswish)");
      }
    }
  } else if (field == "layer_types") {
    for (const auto& t : toks) {
      if (t == "dw") {
        s.layer_types.push_back(LayerType::depthwise);
      } else if (t == "gr") {
        s.layer_types.push_back(LayerType::grouped);
      } else {
        fail("space file: unknown layer type '" + t + "' (expected dw or gr)");
      }
    }
  } else if (field == "channel_scales") {
    for (const auto& t : toks) s.channel_scales.push_back(std::stod(t));
  }
}

// splits "position<p>.<field>" keys; returns position or nullopt
inline std::optional<int> position_prefix(const std::string& key,
                                          std::string* field) {
  if (key.rfind("position", 0) != 0) return std::nullopt;
  const std::size_t dot = key.find('.');
  if (dot == std::string::npos) return std::nullopt;
  const std::string num = key.substr(8, dot - 8);
  if (num.empty()) return std::nullopt;
  for (char c : num) {
    if (c < '0' || c > '9') return std::nullopt;
  }
  *field = key.substr(dot + 1);
  return std::stoi(num);
}

}  // namespace detail

struct SpaceFile {
  SearchSpace root;
  std::vector<ConstraintSpec> constraints;

  const ConstraintSpec* constraint(const std::string& name) const {
    for (const auto& c : constraints) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
};

// Space file layout:
//
//   [space]
//   name = desk3
//   preset = desk-ref-3
//   kernels = 3 5
//   expands = 2 3
//   depths = 1 2 3
//   attention = relu seswish
//   layer_types = dw gr
//   channel_scales = 0.5 1.0
//
//   [constraint depthwise-only]
//   layer_types = dw
//   position0.kernels = 3        # optional per-position override
//
//   [constraint compression]
//   mode = compression
inline SpaceFile load_space_file(const std::string& path) {
  const ConfigFile cfg = ConfigFile::parse_file(path);
  check(cfg.has_section("space"),
        "space file " + path + " has no [space] section");
  SpaceFile out;
  const std::string preset_name = cfg.get("space", "preset");
  const ModelPreset preset = preset_by_name(preset_name);
  SpaceGrid grid;
  AxisSets axes;
  for (const auto& [k, v] : cfg.section("space")->entries) {
    if (k == "name" || k == "preset") continue;
    check(detail::is_axis_field(k),
          "space file: unknown key '" + k + "' in [space]");
    detail::apply_axis_field(axes, k, v);
  }
  if (!axes.kernels.empty()) grid.kernels = axes.kernels;
  if (!axes.expands.empty()) grid.expands = axes.expands;
  if (!axes.depths.empty()) grid.depths = axes.depths;
  if (!axes.attention.empty()) grid.attention = axes.attention;
  if (!axes.layer_types.empty()) grid.layer_types = axes.layer_types;
  if (!axes.channel_scales.empty()) grid.channel_scales = axes.channel_scales;
  out.root = make_space(cfg.get_or("space", "name", preset_name), preset, grid);
  for (const auto* sec : cfg.sections_with_prefix("constraint ")) {
    ConstraintSpec spec;
    spec.name = trim(sec->name.substr(std::string("constraint ").size()));
    check(!spec.name.empty(), "space file: constraint section without a name");
    for (const auto& [k, v] : sec->entries) {
      if (k == "mode") {
        check(v == "compression",
              "space file: unknown constraint mode '" + v + "'");
        spec.compression = true;
        continue;
      }
      std::string field;
      if (auto pos = detail::position_prefix(k, &field)) {
        check(detail::is_axis_field(field),
              "space file: unknown key '" + k + "' in [" + sec->name + "]");
        check(*pos >= 0 && *pos < out.root.positions(),
              "space file: position " + std::to_string(*pos) +
                  " out of range in [" + sec->name + "]");
        detail::apply_axis_field(spec.per_position[*pos], field, v);
        continue;
      }
      check(detail::is_axis_field(k),
            "space file: unknown key '" + k + "' in [" + sec->name + "]");
      detail::apply_axis_field(spec.global, k, v);
    }
    out.constraints.push_back(std::move(spec));
  }
  return out;
}

// uniform sampling without replacement at the genome level; duplicates are
// re-drawn, so the caller gets `count` distinct genomes
inline std::vector<Genome> sample_unique(const SearchSpace& space, int count,
                                         std::uint64_t seed) {
  check(count >= 1, "sample: count must be >= 1");
  const u128 card = space.cardinality();
  check(static_cast<u128>(count) <= card,
        "sample: asked for " + std::to_string(count) +
            " distinct genomes from a space of cardinality " +
            u128_to_string(card));
  Rng rng(seed);
  std::vector<Genome> out;
  std::map<Genome, bool> seen;
  long long attempts = 0;
  const long long cap = 1000LL * count + 1000;
  while (static_cast<int>(out.size()) < count) {
    check(++attempts <= cap, "sample: rejection cap exceeded");
    Genome g = space.sample(rng);
    if (seen.emplace(g, true).second) out.push_back(std::move(g));
  }
  return out;
}

}  // namespace donna
