#include "vgs/threading.hpp"

#include <exception>
#include <thread>
#include <vector>

namespace vgs {

void parallel_for(std::size_t n, int threads,
                  const std::function<void(int, std::size_t, std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    fn(0, 0, n);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  const std::size_t chunk = (n + workers - 1) / workers;

  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);

  auto run = [&](std::size_t w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    try {
      if (begin < end) fn(static_cast<int>(w), begin, end);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };

  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace vgs
