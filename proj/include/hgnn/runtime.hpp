#pragma once

#include <cstdlib>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hgnn {

/// Keeps large per-step buffers on the heap instead of fresh mmaps; each
/// training step allocates and frees several 1 MB gradients.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

/// Worker cap for parallel ablation cells from HGNN_THREADS (default 1).
inline unsigned thread_cap() {
    const char* env = std::getenv("HGNN_THREADS");
    if (!env || !*env) return 1;
    try {
        const long n = std::stol(env);
        return n < 1 ? 1u : static_cast<unsigned>(n);
    } catch (...) {
        return 1;
    }
}

} // namespace hgnn
