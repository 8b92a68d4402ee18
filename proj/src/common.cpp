#include "cpga/common.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace cpga {

namespace {
std::atomic<int> g_max_threads{0}; // 0 = not yet initialized

int default_threads() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}
} // namespace

void set_max_threads(int n) {
    g_max_threads.store(std::max(1, n));
}

int max_threads() {
    int n = g_max_threads.load();
    if (n == 0) {
        n = default_threads();
        g_max_threads.store(n);
    }
    return n;
}

void parallel_for(int n, const std::function<void(int, int)>& fn) {
    if (n <= 0) {
        return;
    }
    const int workers = std::min(max_threads(), n);
    if (workers <= 1) {
        fn(0, n);
        return;
    }
    const int chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) {
        const int begin = w * chunk;
        const int end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back(fn, begin, end);
    }
    fn(0, std::min(n, chunk));
    for (auto& t : pool) {
        t.join();
    }
}

} // namespace cpga
