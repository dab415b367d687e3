#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace betacut {

// worker cap: BETACUT_THREADS, else hardware concurrency
inline int thread_count() {
  if (const char* s = std::getenv("BETACUT_THREADS")) {
    try {
      int v = std::stoi(s);
      if (v >= 1) return v;
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// f(i) for i in [0, n); static chunking so results do not depend on the thread count
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f, int threads = 0) {
  int T = threads > 0 ? threads : thread_count();
  if (T <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  T = static_cast<int>(std::min<std::size_t>(T, n));
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < T; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += T) f(i);
      } catch (...) {
        std::lock_guard<std::mutex> g(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace betacut
