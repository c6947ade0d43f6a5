#include "translasso/parallel.hpp"

#include <algorithm>

#include <tbb/info.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

namespace translasso {

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body)
{
    if (count == 0) return;
    const int available = tbb::info::default_concurrency();
    workers = workers > 0 ? std::min(workers, available) : available;
    if (workers == 1 || count == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    tbb::task_arena arena(workers);
    arena.execute([&] {
        tbb::parallel_for(std::size_t{0}, count, [&](std::size_t i) { body(i); });
    });
}

} // namespace translasso
