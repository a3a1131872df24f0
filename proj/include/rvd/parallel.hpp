#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rvd {

// Work-sharing over [0, n). Every iteration must be independent and write to
// disjoint outputs; results are then identical for any thread count. Small
// loops stay serial to avoid fork overhead.
template <typename Fn>
inline void parallel_for(int64_t n, int64_t grain, Fn&& fn) {
#ifdef _OPENMP
  if (n >= grain && omp_get_max_threads() > 1) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#else
  (void)grain;
#endif
  for (int64_t i = 0; i < n; ++i) fn(i);
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace rvd
