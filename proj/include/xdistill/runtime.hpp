#pragma once

namespace xdistill {

// Keeps large scratch buffers (im2col matrices, feature maps) on the heap
// instead of returning them to the OS after every layer call; without this,
// page faults from repeated mmap/munmap cost about a third of training time.
// Call once from main().
void tune_allocator();

}  // namespace xdistill
