#include <cstdlib>
#include <string_view>

#include "dscl/kernels.hpp"

namespace dscl::kernels {

#if defined(DSCL_HAVE_AVX2)
const KernelTable& avx2_impl_table();
#endif

const KernelTable* avx2_table() {
#if defined(DSCL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_impl_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = []() -> const KernelTable& {
    const char* forced = std::getenv("DSCL_KERNELS");
    if (forced != nullptr && std::string_view(forced) == "scalar") return scalar_table();
    if (const KernelTable* t = avx2_table()) return *t;
    return scalar_table();
  }();
  return table;
}

}  // namespace dscl::kernels
