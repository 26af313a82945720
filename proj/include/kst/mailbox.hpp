// mailbox.hpp - thread handoff: latest-value triple buffer and a drop-oldest queue
#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <vector>

namespace kst {

/// Single-producer/single-consumer latest-value cell. The writer never waits
/// and the reader always gets a whole value; unread values are overwritten.
template <typename T>
class LatestValueMailbox {
 public:
  LatestValueMailbox() = default;

  void write(T value) {
    slots_[back_] = std::move(value);
    const std::uint8_t prev = middle_.exchange(static_cast<std::uint8_t>(back_ | kFresh), std::memory_order_acq_rel);
    if (prev & kFresh) overwrites_.fetch_add(1, std::memory_order_relaxed);
    back_ = prev & kIndex;
    writes_.fetch_add(1, std::memory_order_relaxed);
  }

  /// Newest unread value, if any.
  std::optional<T> read() {
    if (!(middle_.load(std::memory_order_acquire) & kFresh)) return std::nullopt;
    const std::uint8_t prev = middle_.exchange(static_cast<std::uint8_t>(front_), std::memory_order_acq_rel);
    front_ = prev & kIndex;
    return std::move(slots_[front_]);
  }

  bool has_unread() const { return middle_.load(std::memory_order_acquire) & kFresh; }
  std::uint64_t overwrites() const { return overwrites_.load(std::memory_order_relaxed); }
  std::uint64_t writes() const { return writes_.load(std::memory_order_relaxed); }

 private:
  static constexpr std::uint8_t kIndex = 0x3, kFresh = 0x4;
  T slots_[3]{};
  int back_ = 0;   // writer only
  int front_ = 1;  // reader only
  std::atomic<std::uint8_t> middle_{2};
  std::atomic<std::uint64_t> overwrites_{0};
  std::atomic<std::uint64_t> writes_{0};
};

/// Bounded FIFO; a push onto a full queue drops the oldest entry. The lock is
/// held only for O(1) container operations.
template <typename T>
class DropOldestQueue {
 public:
  explicit DropOldestQueue(std::size_t capacity) : capacity_(capacity) {}

  /// Returns true when an older entry had to be dropped.
  bool push(T v) {
    std::lock_guard<std::mutex> lock(m_);
    bool dropped = false;
    if (q_.size() >= capacity_) {
      q_.pop_front();
      ++dropped_;
      dropped = true;
    }
    q_.push_back(std::move(v));
    return dropped;
  }

  std::optional<T> pop() {
    std::lock_guard<std::mutex> lock(m_);
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

  std::vector<T> drain() {
    std::lock_guard<std::mutex> lock(m_);
    std::vector<T> out(std::make_move_iterator(q_.begin()), std::make_move_iterator(q_.end()));
    q_.clear();
    return out;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(m_);
    return q_.size();
  }
  std::uint64_t dropped() const {
    std::lock_guard<std::mutex> lock(m_);
    return dropped_;
  }
  std::size_t capacity() const { return capacity_; }

 private:
  mutable std::mutex m_;
  std::deque<T> q_;
  std::size_t capacity_;
  std::uint64_t dropped_ = 0;
};

}  // namespace kst
