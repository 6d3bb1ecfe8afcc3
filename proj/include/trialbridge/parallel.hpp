#pragma once

#include <cstddef>
#include <functional>

namespace trialbridge {

/// Process-wide worker count used by parallel sections (bootstrap,
/// imputation chains, forest trees, scenarios). Defaults to 1.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs body(i) for i in [0, n). Results must be written to index-addressed
/// storage so output is independent of the number of workers. The first
/// exception thrown by any body is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace trialbridge
