#pragma once

#include <atomic>
#include <cstdint>

namespace bilevel {

/// Global work counter in units of solver iterations (lower-level
/// iterations plus CG iterations). Safe to share between worker threads.
class CostCounter {
 public:
  CostCounter() = default;
  CostCounter(const CostCounter&) = delete;
  CostCounter& operator=(const CostCounter&) = delete;

  void add(std::int64_t units) { total_.fetch_add(units, std::memory_order_relaxed); }
  std::int64_t value() const { return total_.load(std::memory_order_relaxed); }
  void reset() { total_.store(0, std::memory_order_relaxed); }

 private:
  std::atomic<std::int64_t> total_{0};
};

}  // namespace bilevel
