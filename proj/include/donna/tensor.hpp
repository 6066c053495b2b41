// tensor.hpp: dense row-major double tensor, NCHW layout for rank 4.
#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

#include "donna/common.hpp"

namespace donna {

namespace detail {

// Training allocates and frees the same multi-megabyte activation buffers
// every step. Past the default mmap threshold glibc returns such chunks to
// the kernel on free, so each step pays the page faults again; keeping them
// on the heap makes the buffers recyclable.
struct HeapTuning {
  HeapTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  }
};
inline const HeapTuning heap_tuning{};

// std::vector value-initializes new elements; this allocator default-
// initializes instead, so buffers that are fully overwritten right after
// allocation skip one pass over memory.
template <class T>
struct raw_alloc {
  using value_type = T;
  raw_alloc() = default;
  template <class U>
  raw_alloc(const raw_alloc<U>&) {}
  T* allocate(std::size_t n) { return std::allocator<T>().allocate(n); }
  void deallocate(T* p, std::size_t n) {
    std::allocator<T>().deallocate(p, n);
  }
  template <class U>
  void construct(U*) noexcept {}
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  template <class U>
  bool operator==(const raw_alloc<U>&) const {
    return true;
  }
  template <class U>
  bool operator!=(const raw_alloc<U>&) const {
    return false;
  }
};

}  // namespace detail

// tag for constructing a tensor without zero-filling it; the caller promises
// to write every element before reading any
struct NoInit {};
inline constexpr NoInit no_init{};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_count(), 0.0);
  }

  Tensor(std::vector<int> shape, NoInit) : shape_(std::move(shape)) {
    data_.resize(checked_count());
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape), no_init);
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  long long numel() const { return static_cast<long long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-4 accessor, (n, c, h, w)
  double& at(int n, int c, int h, int w) {
    return data_[idx4(n, c, h, w)];
  }
  double at(int n, int c, int h, int w) const {
    return data_[idx4(n, c, h, w)];
  }

  std::size_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] +
           w;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // same data, new shape; element count must match
  Tensor reshaped(std::vector<int> shape) const {
    Tensor t(std::move(shape), no_init);
    check(t.numel() == numel(), "reshape: element count mismatch");
    std::copy(data_.begin(), data_.end(), t.data_.begin());
    return t;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::size_t checked_count() const {
    long long n = 1;
    for (int d : shape_) {
      check(d > 0, "tensor dimension must be positive");
      n *= d;
    }
    return static_cast<std::size_t>(n);
  }

  std::vector<int> shape_;
  std::vector<double, detail::raw_alloc<double>> data_;
};

inline std::string shape_to_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

inline void require_shape(const Tensor& t, const std::vector<int>& shape,
                          const std::string& who) {
  if (t.shape() != shape) {
    fail(who + ": shape mismatch, got " + t.shape_str() + ", want " +
         shape_to_str(shape));
  }
}

inline bool all_finite(const Tensor& t) {
  const double* p = t.data();
  for (long long i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

}  // namespace donna
