// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <type_traits>
#include <utility>
#include <new>

namespace mspt {

// Process-wide accounting of bytes held by tensor storage. The high-water mark
// is the memory metric reported by the benchmark sweep.
class AllocationStats {
 public:
  static void on_alloc(std::size_t bytes) noexcept;
  static void on_free(std::size_t bytes) noexcept;

  static std::int64_t current_bytes() noexcept;
  static std::int64_t peak_bytes() noexcept;
  // Resets the high-water mark to the currently allocated amount.
  static void reset_peak() noexcept;
};

// Keeps freed heap memory in the process instead of returning it to the OS
// after every step; repeated page faults otherwise dominate small-model
// training. No-op outside glibc.
void retain_heap_memory() noexcept;

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto* p = static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{64}));
    AllocationStats::on_alloc(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    AllocationStats::on_free(n * sizeof(T));
    ::operator delete(p, std::align_val_t{64});
  }

  // Default-initialises, so vector<T>(n) leaves arithmetic elements
  // indeterminate; callers fill explicitly.
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept {
    return true;
  }
};

// Counts multiply-accumulate operations performed by contraction kernels
// (matmul variants and the patch attention kernel) while a scope is active.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const noexcept;

  static bool active() noexcept;
  static void add(std::uint64_t macs) noexcept;

 private:
  std::uint64_t start_;
};

}  // namespace mspt
