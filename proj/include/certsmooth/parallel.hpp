#pragma once

#include <cstddef>
#include <functional>

namespace certsmooth {

/// CERTSMOOTH_WORKERS if set (>= 1), else the hardware concurrency.
std::size_t worker_count();
/// 0 means worker_count(); explicit requests are capped by CERTSMOOTH_WORKERS.
std::size_t resolve_workers(std::size_t requested);

/// Calls fn(i) for i in [0, n) on up to `workers` threads (0 = worker_count()).
/// fn must only write state owned by index i. The exception of the lowest
/// failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

}  // namespace certsmooth
