#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "jodie/common.hpp"

namespace jodie {

// Persistent pool of K workers (the calling thread counts as one). run()
// splits [0, n) into K contiguous chunks; every piece of work must write to
// disjoint memory, which the batch plan guarantees for the callers here.
class WorkerPool {
 public:
  explicit WorkerPool(int workers) : workers_(workers < 1 ? 1 : workers) {
    for (int i = 1; i < workers_; ++i)
      threads_.emplace_back([this, i] { worker_loop(i); });
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  ~WorkerPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_start_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int workers() const { return workers_; }

  // fn(begin, end, worker_index)
  void run(std::size_t n,
           const std::function<void(std::size_t, std::size_t, int)>& fn) {
    if (n == 0) return;
    if (workers_ == 1 || n == 1) {
      fn(0, n, 0);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(mu_);
      task_ = &fn;
      task_n_ = n;
      pending_ = workers_ - 1;
      ++generation_;
    }
    cv_start_.notify_all();
    fn(chunk_begin(n, 0), chunk_begin(n, 1), 0);
    std::unique_lock<std::mutex> lock(mu_);
    cv_done_.wait(lock, [this] { return pending_ == 0; });
    task_ = nullptr;
  }

 private:
  std::size_t chunk_begin(std::size_t n, int w) const {
    return n * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers_);
  }

  void worker_loop(int index) {
    std::uint64_t seen = 0;
    while (true) {
      const std::function<void(std::size_t, std::size_t, int)>* task = nullptr;
      std::size_t n = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_start_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        task = task_;
        n = task_n_;
      }
      if (task) (*task)(chunk_begin(n, index), chunk_begin(n, index + 1), index);
      {
        std::unique_lock<std::mutex> lock(mu_);
        if (--pending_ == 0) cv_done_.notify_one();
      }
    }
  }

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(std::size_t, std::size_t, int)>* task_ = nullptr;
  std::size_t task_n_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace jodie
