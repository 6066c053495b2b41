#pragma once

// Deterministic synthetic 16x16 RGB dataset: eight geometric primitive
// classes rendered with randomized position/scale/colors plus Gaussian pixel
// noise. Stored as "DDS1" binaries so splits regenerate byte-identically.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "donna/common.hpp"
#include "donna/rng.hpp"
#include "donna/tensor.hpp"

namespace donna {

constexpr int kNumClasses = 8;
constexpr int kImageHw = 16;
constexpr int kImageChannels = 3;

inline const char* class_name(int label) {
  static const char* names[kNumClasses] = {"circle",  "square", "triangle",
                                           "cross",   "h-line", "v-line",
                                           "diagonal", "checker"};
  check(label >= 0 && label < kNumClasses,
        "class_name: label " + std::to_string(label) + " out of range");
  return names[label];
}

struct Dataset {
  std::vector<float> pixels;  // sample-major, CHW per sample, values in [0,1]
  std::vector<std::uint8_t> labels;

  int count() const { return static_cast<int>(labels.size()); }

  // Batches are fed to models remapped from [0,1] to [-1,1].
  Tensor batch_images(const std::vector<int>& idx) const {
    const int n = static_cast<int>(idx.size());
    const int sample = kImageChannels * kImageHw * kImageHw;
    Tensor out({n, kImageChannels, kImageHw, kImageHw}, no_init);
    double* dst = out.data();
    for (int i = 0; i < n; ++i) {
      const int s = idx[static_cast<std::size_t>(i)];
      check(s >= 0 && s < count(), "batch_images: index out of range");
      const float* src = pixels.data() + static_cast<std::size_t>(s) * sample;
      for (int k = 0; k < sample; ++k) {
        dst[static_cast<std::size_t>(i) * sample + k] =
            2.0 * static_cast<double>(src[k]) - 1.0;
      }
    }
    return out;
  }

  std::vector<int> batch_labels(const std::vector<int>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int s : idx) {
      check(s >= 0 && s < count(), "batch_labels: index out of range");
      out.push_back(static_cast<int>(labels[static_cast<std::size_t>(s)]));
    }
    return out;
  }
};

namespace detail {

struct Rgb {
  double r, g, b;
};

inline double luminance(const Rgb& c) {
  return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
}

// Renders one sample into `out` (CHW floats). The draw order of random
// variates is part of the format: changing it changes every regenerated split.
inline void draw_sample(int label, Rng& rng, float* out, double noise_std) {
  const Rgb bg{rng.uniform(), rng.uniform(), rng.uniform()};
  Rgb fg{0, 0, 0};
  bool contrast_ok = false;
  for (int attempt = 0; attempt < 100; ++attempt) {
    fg = {rng.uniform(), rng.uniform(), rng.uniform()};
    if (std::abs(luminance(fg) - luminance(bg)) >= 0.3) {
      contrast_ok = true;
      break;
    }
  }
  if (!contrast_ok) fg = {1.0 - bg.r, 1.0 - bg.g, 1.0 - bg.b};

  const double cx = 7.5 + rng.uniform(-2.0, 2.0);
  const double cy = 7.5 + rng.uniform(-2.0, 2.0);
  const double r = rng.uniform(3.0, 5.5);
  const double t = rng.uniform(1.0, 2.2);
  const int cell = static_cast<int>(rng.uniform_int(2, 3));
  const int phase_x = static_cast<int>(rng.uniform_int(0, cell - 1));
  const int phase_y = static_cast<int>(rng.uniform_int(0, cell - 1));

  const auto inside = [&](int x, int y) -> bool {
    const double dx = static_cast<double>(x) - cx;
    const double dy = static_cast<double>(y) - cy;
    switch (label) {
      case 0:  // circle
        return dx * dx + dy * dy <= r * r;
      case 1:  // square
        return std::max(std::abs(dx), std::abs(dy)) <= 0.82 * r;
      case 2: {  // triangle, apex up
        const double top = -r;
        const double bottom = 0.75 * r;
        if (dy < top || dy > bottom) return false;
        const double half_w = 0.95 * r * (dy - top) / (bottom - top);
        return std::abs(dx) <= half_w;
      }
      case 3:  // cross
        return (std::abs(dx) <= t && std::abs(dy) <= r) ||
               (std::abs(dy) <= t && std::abs(dx) <= r);
      case 4:  // h-line, full width
        return std::abs(dy) <= t;
      case 5:  // v-line, full height
        return std::abs(dx) <= t;
      case 6:  // diagonal band through (cx, cy)
        return std::abs(dx - dy) / std::sqrt(2.0) <= t;
      case 7:  // checkerboard; position is the phase, scale the cell size
        return ((x + phase_x) / cell + (y + phase_y) / cell) % 2 == 0;
      default:
        fail("draw_sample: label " + std::to_string(label) + " out of range");
    }
    return false;
  };

  const int hw = kImageHw;
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      const Rgb& c = inside(x, y) ? fg : bg;
      const double chan[3] = {c.r, c.g, c.b};
      for (int ch = 0; ch < kImageChannels; ++ch) {
        double v = chan[ch] + noise_std * rng.normal();
        out[(ch * hw + y) * hw + x] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

}  // namespace detail

// Class-balanced deterministic generation; `count` must divide evenly into
// the eight classes.
inline Dataset generate_dataset(int count, std::uint64_t seed,
                                double noise_std = 0.05) {
  check(count > 0 && count % kNumClasses == 0,
        "generate_dataset: count must be a positive multiple of " +
            std::to_string(kNumClasses));
  Rng rng(derive_seed(seed, "dataset"));

  std::vector<int> order(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);

  const int sample = kImageChannels * kImageHw * kImageHw;
  Dataset data;
  data.pixels.assign(static_cast<std::size_t>(count) * sample, 0.0F);
  data.labels.assign(static_cast<std::size_t>(count), 0);
  for (int i = 0; i < count; ++i) {
    const int slot = order[static_cast<std::size_t>(i)];
    const int label = i % kNumClasses;
    data.labels[static_cast<std::size_t>(slot)] =
        static_cast<std::uint8_t>(label);
    detail::draw_sample(
        label, rng, data.pixels.data() + static_cast<std::size_t>(slot) * sample,
        noise_std);
  }
  return data;
}

// ------------------------------------------------------------- DDS1 format

inline void save_dataset(const std::string& path, const Dataset& data) {
  std::string bytes;
  const auto put_u32 = [&](std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    bytes.append(buf, 4);
  };
  bytes.append("DDS1", 4);
  put_u32(static_cast<std::uint32_t>(data.count()));
  put_u32(static_cast<std::uint32_t>(kImageChannels));
  put_u32(static_cast<std::uint32_t>(kImageHw));
  put_u32(static_cast<std::uint32_t>(kImageHw));
  bytes.append(reinterpret_cast<const char*>(data.pixels.data()),
               data.pixels.size() * sizeof(float));
  bytes.append(reinterpret_cast<const char*>(data.labels.data()),
               data.labels.size());
  write_file(path, bytes);
}

inline Dataset load_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  check(bytes.size() >= 20 && bytes.compare(0, 4, "DDS1") == 0,
        "dataset " + path + ": missing DDS1 magic");
  std::size_t off = 4;
  const auto get_u32 = [&]() {
    std::uint32_t v = 0;
    std::memcpy(&v, bytes.data() + off, 4);
    off += 4;
    return v;
  };
  const std::uint32_t count = get_u32();
  const std::uint32_t c = get_u32();
  const std::uint32_t h = get_u32();
  const std::uint32_t w = get_u32();
  check(c == kImageChannels && h == kImageHw && w == kImageHw,
        "dataset " + path + ": unexpected shape " + std::to_string(c) + "x" +
            std::to_string(h) + "x" + std::to_string(w));
  const std::size_t sample = static_cast<std::size_t>(c) * h * w;
  const std::size_t need =
      20 + count * sample * sizeof(float) + static_cast<std::size_t>(count);
  check(bytes.size() == need,
        "dataset " + path + ": size " + std::to_string(bytes.size()) +
            ", expected " + std::to_string(need));

  Dataset data;
  data.pixels.resize(static_cast<std::size_t>(count) * sample);
  std::memcpy(data.pixels.data(), bytes.data() + off,
              data.pixels.size() * sizeof(float));
  off += data.pixels.size() * sizeof(float);
  data.labels.resize(count);
  std::memcpy(data.labels.data(), bytes.data() + off, count);
  for (std::uint8_t l : data.labels) {
    check(l < kNumClasses, "dataset " + path + ": label out of range");
  }
  return data;
}

}  // namespace donna
