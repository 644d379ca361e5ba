// prnnt/alloc_tracker.h
//
// Byte accounting for every buffer owned by a DenseArray.  The benchmark
// reports peak memory from these counters.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>

namespace prnnt {
namespace alloc {

namespace detail {
inline std::atomic<int64_t> &CurrentBytes() {
  static std::atomic<int64_t> v{0};
  return v;
}
inline std::atomic<int64_t> &PeakBytes() {
  static std::atomic<int64_t> v{0};
  return v;
}
}  // namespace detail

inline int64_t CurrentBytes() { return detail::CurrentBytes().load(); }
inline int64_t PeakBytes() { return detail::PeakBytes().load(); }

inline void Register(int64_t bytes) {
  int64_t now = detail::CurrentBytes().fetch_add(bytes) + bytes;
  int64_t peak = detail::PeakBytes().load();
  while (now > peak && !detail::PeakBytes().compare_exchange_weak(peak, now)) {
  }
}

inline void Release(int64_t bytes) { detail::CurrentBytes().fetch_sub(bytes); }

/* Measures the high-water mark of tracked bytes while it is alive.

   On construction the global peak is lowered to the current level; on
   destruction it is restored to max(previous peak, peak seen in scope), so
   scopes nest correctly.  Not meaningful if other threads allocate
   concurrently.
 */
class PeakScope {
 public:
  PeakScope()
      : saved_peak_(detail::PeakBytes().load()),
        baseline_(detail::CurrentBytes().load()) {
    detail::PeakBytes().store(baseline_);
  }
  PeakScope(const PeakScope &) = delete;
  PeakScope &operator=(const PeakScope &) = delete;
  ~PeakScope() {
    int64_t inner = detail::PeakBytes().load();
    detail::PeakBytes().store(std::max(saved_peak_, inner));
  }

  // Tracked bytes live when the scope was opened.
  int64_t Baseline() const { return baseline_; }
  // Absolute high-water mark since the scope was opened.
  int64_t Peak() const { return detail::PeakBytes().load(); }
  // High-water mark of bytes allocated on top of the baseline.
  int64_t PeakAboveBaseline() const { return Peak() - baseline_; }

 private:
  int64_t saved_peak_;
  int64_t baseline_;
};

// std::allocator-compatible allocator that registers every byte it hands out.
template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U> &) noexcept {}

  T *allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T))
      throw std::bad_array_new_length();
    T *p = static_cast<T *>(::operator new(n * sizeof(T)));
    Register(static_cast<int64_t>(n * sizeof(T)));
    return p;
  }
  void deallocate(T *p, std::size_t n) noexcept {
    ::operator delete(p);
    Release(static_cast<int64_t>(n * sizeof(T)));
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U> &) const noexcept {
    return true;
  }
};

}  // namespace alloc
}  // namespace prnnt
