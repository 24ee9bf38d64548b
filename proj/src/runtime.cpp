#include "lpr/runtime.hpp"

#include <cstdlib>  // defines __GLIBC__ on glibc systems

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lpr {

void tune_allocator() {
#if defined(__GLIBC__)
  // Setting either value freezes glibc's adaptive thresholds, so both are
  // set. 32 MiB is the largest mmap threshold glibc accepts on 64-bit.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace lpr
