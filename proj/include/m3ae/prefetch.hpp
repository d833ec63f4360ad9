#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

namespace m3ae {

/// Produces items 0..count-1 on background workers and hands them out in
/// index order. At most `depth` items are buffered ahead of the consumer.
/// Items must be pure functions of their index for the output to be
/// independent of the worker count.
template <typename T>
class OrderedPrefetcher {
 public:
  OrderedPrefetcher(std::size_t count, std::function<T(std::size_t)> make, int workers, std::size_t depth)
      : count_(count), make_(std::move(make)), depth_(depth == 0 ? 1 : depth) {
    for (int w = 0; w < std::max(workers, 1); ++w) workers_.emplace_back([this](std::stop_token st) { run(st); });
  }

  ~OrderedPrefetcher() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    for (auto& w : workers_) w.request_stop();
    cv_.notify_all();
  }

  OrderedPrefetcher(const OrderedPrefetcher&) = delete;
  OrderedPrefetcher& operator=(const OrderedPrefetcher&) = delete;

  T next() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [this] { return ready_.count(consumed_) || (error_ && error_index_ == consumed_); });
    if (!ready_.count(consumed_)) std::rethrow_exception(error_);
    T item = std::move(ready_.at(consumed_));
    ready_.erase(consumed_);
    ++consumed_;
    cv_.notify_all();
    return item;
  }

 private:
  void run(std::stop_token st) {
    while (!st.stop_requested()) {
      std::size_t index = 0;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopping_ || claimed_ >= count_ || claimed_ < consumed_ + depth_; });
        if (stopping_ || claimed_ >= count_) return;
        index = claimed_++;
      }
      try {
        T item = make_(index);
        std::lock_guard lock(mutex_);
        ready_.emplace(index, std::move(item));
      } catch (...) {
        std::lock_guard lock(mutex_);
        // Keep the earliest failure; items before it are still delivered.
        if (!error_ || index < error_index_) {
          error_ = std::current_exception();
          error_index_ = index;
        }
      }
      cv_.notify_all();
    }
  }

  std::size_t count_;
  std::function<T(std::size_t)> make_;
  std::size_t depth_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::size_t, T> ready_;
  std::size_t claimed_ = 0;
  std::size_t consumed_ = 0;
  bool stopping_ = false;
  std::exception_ptr error_;
  std::size_t error_index_ = 0;
  std::vector<std::jthread> workers_;
};

}  // namespace m3ae
