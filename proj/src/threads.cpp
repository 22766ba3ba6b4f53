#include "travgrid/threads.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace travgrid {

int thread_limit() {
  const char* env = std::getenv("TRAVGRID_THREADS");
  if (env == nullptr) return 1;
  try {
    const int n = std::stoi(env);
    return std::max(1, n);
  } catch (const std::exception&) {
    return 1;
  }
}

void parallel_rows(int n, int threads, const std::function<void(int, int)>& body) {
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int begin = t * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(body, begin, end);
  }
  for (auto& th : pool) th.join();
}

}  // namespace travgrid
