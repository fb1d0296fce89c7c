#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ctseg {

// Minimal persistent worker pool backing parallel_for. Work is split into
// one contiguous chunk per participant, so each output element is computed
// by exactly one thread with a fixed per-element reduction order; results
// are bitwise independent of the thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  // Total number of participating threads (caller included). n < 1 means 1.
  void set_threads(int n) {
    std::unique_lock lock(config_mutex_);
    int workers = n < 1 ? 0 : n - 1;
    if (workers == static_cast<int>(threads_.size())) return;
    shutdown();
    stop_ = false;
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  int threads() const { return static_cast<int>(threads_.size()) + 1; }

  ~ThreadPool() { shutdown(); }

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

 private:
  ThreadPool() = default;

  void shutdown() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
        if (stop_ && queue_.empty()) return;
        task = std::move(queue_.front());
        queue_.pop_front();
      }
      task();
    }
  }

  std::mutex config_mutex_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  std::vector<std::thread> threads_;
  bool stop_ = false;
};

inline void set_thread_count(int n) { ThreadPool::instance().set_threads(n); }
inline int thread_count() { return ThreadPool::instance().threads(); }

// Runs fn(begin, end) over a partition of [0, n). Falls back to a single
// inline call when the pool has one thread or the range is small.
template <typename Fn>
void parallel_for(int64_t n, const Fn& fn, int64_t grain = 1024) {
  if (n <= 0) return;
  auto& pool = ThreadPool::instance();
  int parts = pool.threads();
  if (parts <= 1 || n < grain * 2) {
    fn(int64_t{0}, n);
    return;
  }
  if (parts > n) parts = static_cast<int>(n);

  // The completion latch is heap-shared with the tasks: the caller may
  // observe completion and return while a worker is still inside the notify
  // section, so the latch must outlive this stack frame.
  struct Latch {
    std::mutex mutex;
    std::condition_variable cv;
    int remaining;
  };
  auto latch = std::make_shared<Latch>();
  latch->remaining = parts - 1;

  const int64_t chunk = (n + parts - 1) / parts;
  for (int p = 1; p < parts; ++p) {
    int64_t begin = p * chunk;
    int64_t end = std::min<int64_t>(n, begin + chunk);
    if (begin >= end) {
      std::lock_guard lock(latch->mutex);
      --latch->remaining;
      continue;
    }
    pool.submit([latch, &fn, begin, end] {
      fn(begin, end);
      std::lock_guard lock(latch->mutex);
      if (--latch->remaining == 0) latch->cv.notify_one();
    });
  }
  fn(int64_t{0}, std::min<int64_t>(n, chunk));
  std::unique_lock lock(latch->mutex);
  latch->cv.wait(lock, [&] { return latch->remaining == 0; });
}

}  // namespace ctseg
