#include "grok/runtime.hpp"

#include <cstdlib>
#include <string>

#include <cblas.h>

namespace grok {

std::string version() { return "0.1.0"; }

int configured_threads() {
  const char* env = std::getenv("GROK_THREADS");
  if (!env || !*env) return 1;
  try {
    const int n = std::stoi(env);
    return n > 0 ? n : 1;
  } catch (const std::exception&) {
    return 1;
  }
}

void set_threads(int n) { openblas_set_num_threads(n > 0 ? n : 1); }

}  // namespace grok
