// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rigidflow {

/// Runs fn(0..n-1) on up to `jobs` worker threads. Callers are responsible
/// for writing results into index-addressed slots so that the outcome is
/// independent of scheduling. The first exception thrown by any worker is
/// rethrown on the calling thread.
template <typename F>
void parallel_for(int n, int jobs, F&& fn) {
  if (jobs < 1) jobs = 1;
  if (jobs > n) jobs = n;
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      try {
        for (int i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        next.store(n);
      }
    });
  }
  for (auto& t : workers) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace rigidflow
