#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hale {

// Minimal persistent worker pool. Work is always split into one contiguous
// block per worker (fixed boundaries), so reductions that merge per-block
// partials in block order are reproducible for a given thread count.
class ThreadPool {
 public:
  explicit ThreadPool(int threads) {
    if (threads < 1) threads = 1;
    size_ = threads;
    for (int t = 1; t < threads; ++t) {
      workers_.emplace_back([this, t] { worker_loop(t); });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_work_.notify_all();
    for (auto& w : workers_) w.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return size_; }

  // Runs fn(block_index, begin, end) for `size()` contiguous blocks covering
  // [0, n). The calling thread executes block 0; blocks can be empty.
  void for_blocks(std::size_t n,
                  const std::function<void(int, std::size_t, std::size_t)>& fn) {
    if (size_ == 1 || n == 0) {
      fn(0, 0, n);
      return;
    }
    {
      std::unique_lock<std::mutex> lk(mu_);
      job_ = &fn;
      job_n_ = n;
      pending_ = size_ - 1;
      ++epoch_;
    }
    cv_work_.notify_all();
    auto [b, e] = block_range(0, n);
    fn(0, b, e);
    std::unique_lock<std::mutex> lk(mu_);
    cv_done_.wait(lk, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  std::pair<std::size_t, std::size_t> block_range(int t, std::size_t n) const {
    const std::size_t chunk = (n + size_ - 1) / size_;
    const std::size_t b = std::min(n, chunk * static_cast<std::size_t>(t));
    const std::size_t e = std::min(n, b + chunk);
    return {b, e};
  }

  void worker_loop(int t) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int, std::size_t, std::size_t)>* job = nullptr;
      std::size_t n = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_work_.wait(lk, [&] { return stop_ || epoch_ != seen; });
        if (stop_) return;
        seen = epoch_;
        job = job_;
        n = job_n_;
      }
      auto [b, e] = block_range(t, n);
      (*job)(t, b, e);
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (--pending_ == 0) cv_done_.notify_one();
      }
    }
  }

  int size_ = 1;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_work_, cv_done_;
  const std::function<void(int, std::size_t, std::size_t)>* job_ = nullptr;
  std::size_t job_n_ = 0;
  int pending_ = 0;
  std::uint64_t epoch_ = 0;
  bool stop_ = false;
};

}  // namespace hale
