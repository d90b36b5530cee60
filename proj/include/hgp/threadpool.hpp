#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hgp {

/// Fixed-size pool executing batches of indexed jobs. Job i writes only its
/// own output slot, so results do not depend on scheduling order.
class ThreadPool {
 public:
  explicit ThreadPool(int n_threads) {
    if (n_threads < 1) n_threads = 1;
    for (int i = 0; i < n_threads; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()); }

  /// Runs fn(0..n-1) across the pool and blocks until all jobs finish.
  /// Exceptions from jobs are rethrown on the calling thread (first wins).
  void parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    std::unique_lock<std::mutex> lock(mu_);
    job_ = &fn;
    next_ = 0;
    pending_ = n;
    total_ = n;
    error_ = nullptr;
    cv_.notify_all();
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void worker_loop() {
    for (;;) {
      const std::function<void(int)>* job = nullptr;
      int idx = -1;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return stop_ || (job_ && next_ < total_); });
        if (stop_) return;
        job = job_;
        idx = next_++;
      }
      std::exception_ptr err;
      try {
        (*job)(idx);
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (err && !error_) error_ = err;
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  int next_ = 0;
  int total_ = 0;
  int pending_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

}  // namespace hgp
