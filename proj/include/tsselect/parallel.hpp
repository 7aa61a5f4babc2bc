#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tsselect {

/**
 * @brief Run fn(i) for i in [0, n) on up to `threads` workers.
 *
 * Work items must write to disjoint state. The first exception thrown by any
 * item is rethrown on the calling thread after all workers stop.
 */
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t threads = 0) {
	if (threads == 0) {
		threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
	}
	threads = std::min(threads, n);
	if (threads <= 1) {
		for (std::size_t i = 0; i < n; ++i) fn(i);
		return;
	}
	std::atomic<std::size_t> next{0};
	std::exception_ptr failure;
	std::mutex failure_mutex;
	{
		std::vector<std::jthread> workers;
		for (std::size_t t = 0; t < threads; ++t) {
			workers.emplace_back([&] {
				for (std::size_t i = next++; i < n; i = next++) {
					try {
						fn(i);
					} catch (...) {
						std::lock_guard lock(failure_mutex);
						if (!failure) failure = std::current_exception();
						next = n;
					}
				}
			});
		}
	}
	if (failure) std::rethrow_exception(failure);
}

} // namespace tsselect
