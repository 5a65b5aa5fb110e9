#include "metric_align/parallel.hpp"

#include <cstdlib>
#include <string>

namespace metric_align {

std::size_t worker_count() {
  if (const char* env = std::getenv("METRIC_ALIGN_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return std::size_t(v);
    } catch (...) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace metric_align
