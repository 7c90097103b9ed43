#include "atmdg/threading.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

namespace atmdg::threading {

namespace {

int g_threads = 1;

// Minimal long-lived pool: workers pick statically assigned chunk ranges.
class Pool {
public:
  explicit Pool(int n) : want_stop_(false), generation_(0), active_(0) {
    for (int i = 1; i < n; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
    nthreads_ = n;
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      want_stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return nthreads_; }

  void run(std::size_t nchunks, const std::function<void(std::size_t)>& chunk_fn) {
    if (nthreads_ == 1 || nchunks <= 1) {
      for (std::size_t c = 0; c < nchunks; ++c) chunk_fn(c);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mu_);
      chunk_fn_ = &chunk_fn;
      nchunks_ = nchunks;
      next_chunk_.store(0, std::memory_order_relaxed);
      active_ = nthreads_ - 1;
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    drain();
    {
      std::unique_lock<std::mutex> lk(mu_);
      done_cv_.wait(lk, [this] { return active_ == 0; });
      chunk_fn_ = nullptr;
      if (error_) {
        auto err = error_;
        error_ = nullptr;
        std::rethrow_exception(err);
      }
    }
  }

private:
  void drain() {
    const auto* fn = chunk_fn_;
    std::size_t c;
    while ((c = next_chunk_.fetch_add(1, std::memory_order_relaxed)) < nchunks_) {
      try {
        (*fn)(c);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu_);
        if (!error_) error_ = std::current_exception();
      }
    }
  }

  void worker_loop(int) {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return want_stop_ || generation_ != seen; });
        if (want_stop_) return;
        seen = generation_;
      }
      drain();
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (--active_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  int nthreads_ = 1;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  bool want_stop_;
  std::uint64_t generation_;
  int active_;
  const std::function<void(std::size_t)>* chunk_fn_ = nullptr;
  std::size_t nchunks_ = 0;
  std::atomic<std::size_t> next_chunk_{0};
  std::exception_ptr error_ = nullptr;
};

Pool* pool() {
  static Pool* p = new Pool(g_threads);
  return p;
}

bool g_pool_started = false;

} // namespace

void set_num_threads(int n) {
  g_threads = std::max(1, n);
  // Pool is created lazily on first parallel call; changing the count after
  // that is not supported (thread count is fixed per run).
}

int num_threads() { return g_threads; }

void parallel_for_chunks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  g_pool_started = true;
  Pool* p = pool();
  const std::size_t nchunks = std::min<std::size_t>(n, std::size_t(p->size()) * 4);
  const std::size_t chunk = (n + nchunks - 1) / nchunks;
  p->run(nchunks, [&](std::size_t c) {
    const std::size_t b = c * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b < e) fn(b, e);
  });
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  parallel_for_chunks(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

double parallel_sum(std::size_t n, const std::function<double(std::size_t)>& term) {
  constexpr std::size_t kBlock = 4096;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(nblocks, 0.0);
  parallel_for(nblocks, [&](std::size_t b) {
    double s = 0.0;
    const std::size_t e = std::min(n, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < e; ++i) s += term(i);
    partial[b] = s;
  });
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

double parallel_max(std::size_t n, const std::function<double(std::size_t)>& term) {
  constexpr std::size_t kBlock = 4096;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(nblocks, -std::numeric_limits<double>::infinity());
  parallel_for(nblocks, [&](std::size_t b) {
    double m = -std::numeric_limits<double>::infinity();
    const std::size_t e = std::min(n, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < e; ++i) m = std::max(m, term(i));
    partial[b] = m;
  });
  double total = -std::numeric_limits<double>::infinity();
  for (double v : partial) total = std::max(total, v);
  return total;
}

} // namespace atmdg::threading
