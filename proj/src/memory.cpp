// Copyright (c) 2026 The MSPT Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mspt/memory.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mspt {

namespace {
std::atomic<std::int64_t> g_current{0};
std::atomic<std::int64_t> g_peak{0};
std::atomic<std::uint64_t> g_macs{0};
std::atomic<int> g_counter_scopes{0};
}  // namespace

void AllocationStats::on_alloc(std::size_t bytes) noexcept {
  const auto now = g_current.fetch_add(static_cast<std::int64_t>(bytes)) + static_cast<std::int64_t>(bytes);
  auto peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void AllocationStats::on_free(std::size_t bytes) noexcept { g_current.fetch_sub(static_cast<std::int64_t>(bytes)); }

std::int64_t AllocationStats::current_bytes() noexcept { return g_current.load(); }
std::int64_t AllocationStats::peak_bytes() noexcept { return g_peak.load(); }
void AllocationStats::reset_peak() noexcept { g_peak.store(g_current.load()); }

void retain_heap_memory() noexcept {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

MacCounter::MacCounter() : start_(g_macs.load()) { g_counter_scopes.fetch_add(1); }
MacCounter::~MacCounter() { g_counter_scopes.fetch_sub(1); }

std::uint64_t MacCounter::count() const noexcept { return g_macs.load() - start_; }

bool MacCounter::active() noexcept { return g_counter_scopes.load(std::memory_order_relaxed) > 0; }

void MacCounter::add(std::uint64_t macs) noexcept {
  if (active()) g_macs.fetch_add(macs, std::memory_order_relaxed);
}

}  // namespace mspt
