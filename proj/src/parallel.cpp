#include "aio2/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace aio2 {

int configured_threads() {
  static const int n = [] {
    const char* env = std::getenv("AIO2_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1 || v > 256) return 1;
    return static_cast<int>(v);
  }();
  return n;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(configured_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const auto run = [&fn, n, workers](int wid) {
    const int lo = static_cast<int>(static_cast<long>(n) * wid / workers);
    const int hi = static_cast<int>(static_cast<long>(n) * (wid + 1) / workers);
    for (int i = lo; i < hi; ++i) fn(i);
  };
  for (int w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
}

}  // namespace aio2
