#include <cstdlib>
#include <string_view>

#include "gditd/kernels.hpp"

namespace gditd::kernels {

#if defined(GDITD_HAVE_AVX2)
namespace detail {
const KernelTable& avx2_table();
}
#endif

const KernelTable* avx2() {
#if defined(GDITD_HAVE_AVX2)
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? &detail::avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = []() -> const KernelTable& {
    const char* forced = std::getenv("GDITD_SIMD");
    if (forced != nullptr && std::string_view(forced) == "scalar") return scalar();
    if (const KernelTable* wide = avx2()) return *wide;
    return scalar();
  }();
  return table;
}

}  // namespace gditd::kernels
