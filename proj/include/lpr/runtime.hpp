#pragma once

namespace lpr {

/// Keeps freed tensor buffers inside the process heap. The allocator's
/// defaults return large blocks to the kernel after every batch, and the
/// resulting page faults cost as much time as the arithmetic. Call once at
/// program start; a no-op outside glibc.
void tune_allocator();

}  // namespace lpr
