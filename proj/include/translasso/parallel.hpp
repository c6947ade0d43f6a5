#pragma once

#include <cstddef>
#include <functional>

namespace translasso {

/**
 * Runs body(i) for i in [0, count) on at most `workers` threads (0 = all
 * hardware threads). Results must be written to index-addressed slots so the
 * outcome does not depend on scheduling. The first exception thrown by a
 * task is rethrown.
 */
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body);

} // namespace translasso
