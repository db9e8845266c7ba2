#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace takit::parallel {

/// Ordered parallel map over JSONL lines: records are processed by `fn` in
/// worker threads and written strictly in input order, so the output is
/// byte-identical for any thread count. Memory stays bounded by the batch
/// size regardless of file length. `fn(index, line)` returns the output line
/// or nullopt to skip the record; it must be a pure function of its
/// arguments. The first exception thrown by `fn` is rethrown on the caller's
/// thread after the current batch drains.
inline void map_lines_ordered(std::istream& in, std::ostream& out, int threads,
                              const std::function<std::optional<std::string>(
                                  size_t, const std::string&)>& fn,
                              size_t batch_size = 1024) {
  if (threads < 1) threads = 1;
  std::vector<std::string> batch;
  batch.reserve(batch_size);
  std::vector<std::optional<std::string>> results;
  size_t base_index = 0;
  std::string line;

  std::mutex err_mutex;
  std::exception_ptr first_error;

  auto guarded = [&](size_t index, const std::string& text) -> std::optional<std::string> {
    try {
      return fn(index, text);
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (!first_error) first_error = std::current_exception();
      return std::nullopt;
    }
  };

  auto flush = [&]() {
    if (batch.empty()) return;
    results.assign(batch.size(), std::nullopt);
    if (threads == 1) {
      for (size_t i = 0; i < batch.size(); ++i) results[i] = guarded(base_index + i, batch[i]);
    } else {
      std::atomic<size_t> next{0};
      std::vector<std::thread> pool;
      pool.reserve(threads);
      for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
          for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= batch.size()) return;
            results[i] = guarded(base_index + i, batch[i]);
          }
        });
      }
      for (std::thread& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    for (const auto& r : results) {
      if (r) out << *r << "\n";
    }
    base_index += batch.size();
    batch.clear();
  };

  while (std::getline(in, line)) {
    batch.push_back(line);
    if (batch.size() >= batch_size) flush();
  }
  flush();
}

}  // namespace takit::parallel
