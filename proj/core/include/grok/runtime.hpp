#pragma once

#include <string>

namespace grok {

std::string version();

/// Thread count for matrix kernels: GROK_THREADS if set and positive, else 1.
int configured_threads();
/// Applies a thread count to the BLAS backend.
void set_threads(int n);

}  // namespace grok
