#include "twobox/parallel.hpp"

#include <atomic>

namespace twobox {

namespace {
std::atomic<int> g_threads{0};
}

void set_default_threads(int threads) { g_threads = threads < 0 ? 0 : threads; }

int default_threads() {
  const int t = g_threads.load();
  if (t > 0) return t;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace twobox
