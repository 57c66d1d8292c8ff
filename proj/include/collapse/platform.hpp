#pragma once

// Process-level tuning for the dense solvers.

#if __has_include(<malloc.h>)
#include <malloc.h>
#endif

namespace collapse {

/// Keeps large temporaries on the heap instead of fresh mappings. The full
/// solver allocates many same-sized matrices per step, and first-touch page
/// faults on new mappings otherwise dominate its run time.
inline void tune_allocator() {
#if defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD) && defined(M_TOP_PAD)
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

}  // namespace collapse
