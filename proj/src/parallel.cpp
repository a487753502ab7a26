#include "hemis/parallel.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace hemis {

namespace {
std::atomic<int> g_thread_count{0};
}

void set_thread_count(int n) {
    g_thread_count.store(n < 0 ? 0 : n);
}

int thread_count() {
    int n = g_thread_count.load();
    if (n <= 0) {
        const unsigned hc = std::thread::hardware_concurrency();
        n = hc == 0 ? 1 : static_cast<int>(hc);
    }
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads) {
    if (n == 0) {
        return;
    }
    std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                      : static_cast<std::size_t>(thread_count());
    if (workers > n) {
        workers = n;
    }
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }

    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        pool.emplace_back([&, begin, end]() {
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    fn(i);
                }
            } catch (...) {
                bool expected = false;
                if (failed.compare_exchange_strong(expected, true)) {
                    first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

}  // namespace hemis
