#ifndef ATMDG_THREADING_HPP
#define ATMDG_THREADING_HPP

#include <cstddef>
#include <functional>

namespace atmdg {

/// Global worker-pool configuration. Thread count is fixed per process run;
/// all parallel loops chunk work statically so results do not depend on
/// scheduling. Reductions accumulate fixed-size block partials that are summed
/// in index order, so they are bitwise reproducible at any thread count.
namespace threading {

void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [0, n). Blocks until all work is done.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Runs fn(begin, end) over disjoint chunks covering [0, n).
void parallel_for_chunks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn);

/// Deterministic sum of term(i) for i in [0, n): fixed 4096-element blocks,
/// block partials summed in order.
double parallel_sum(std::size_t n, const std::function<double(std::size_t)>& term);

/// Deterministic max of term(i) for i in [0, n).
double parallel_max(std::size_t n, const std::function<double(std::size_t)>& term);

} // namespace threading
} // namespace atmdg

#endif
