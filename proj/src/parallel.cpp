#include "certsmooth/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace certsmooth {

namespace {

std::size_t env_cap()
{
    if (const char* env = std::getenv("CERTSMOOTH_WORKERS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1)
                return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return 0;
}

}  // namespace

std::size_t worker_count()
{
    if (const std::size_t cap = env_cap())
        return cap;
    return std::max(1u, std::thread::hardware_concurrency());
}

std::size_t resolve_workers(std::size_t requested)
{
    if (requested == 0)
        return worker_count();
    const std::size_t cap = env_cap();
    return cap ? std::min(requested, cap) : requested;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers)
{
    workers = std::min(resolve_workers(workers), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr failure;
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back(run);
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

}  // namespace certsmooth
