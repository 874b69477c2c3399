#pragma once

namespace mvbed {

// Keeps freed training buffers in the heap instead of returning them to the
// OS, which otherwise page-faults every large temporary on each step.
// No-op outside glibc. Call once at program start.
void tune_allocator();

}  // namespace mvbed
