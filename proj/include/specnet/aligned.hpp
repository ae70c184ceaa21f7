#pragma once

// 64-byte aligned storage. Vectorized kernels peel a scalar prologue up to
// the first aligned element, so the rounding of a result depends on where
// its buffer starts; a fixed alignment makes every run compute the same
// numbers.

#include <cstddef>
#include <new>
#include <vector>

namespace specnet {

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

}  // namespace specnet
