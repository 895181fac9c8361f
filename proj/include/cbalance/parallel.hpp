#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace cbal {

/// Resolves a thread-count request: 0 means "use the hardware".
inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(begin, end) over a static partition of [begin, end) on up to
/// `threads` workers. Callers must write results to index-addressed slots
/// (or merge integer tallies), so the outcome is identical for every
/// worker count. The first exception thrown by any chunk is rethrown.
inline void parallel_chunks(std::size_t begin, std::size_t end, unsigned threads,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t total = end > begin ? end - begin : 0;
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), total ? total : 1));
  if (total == 0) return;
  if (workers <= 1) {
    fn(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t base = total / workers;
  const std::size_t extra = total % workers;
  std::size_t chunk_begin = begin;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t chunk_len = base + (w < extra ? 1 : 0);
    const std::size_t chunk_end = chunk_begin + chunk_len;
    pool.emplace_back([&fn, &errors, w, chunk_begin, chunk_end] {
      try {
        fn(chunk_begin, chunk_end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
    chunk_begin = chunk_end;
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace cbal
