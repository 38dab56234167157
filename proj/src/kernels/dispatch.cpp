#include <atomic>
#include <cstdlib>
#include <string_view>

#include "irstyle/kernels.hpp"

namespace irstyle::kernels {

#if IRSTYLE_HAVE_AVX2
const KernelTable* avx2_kernel_table();
#endif

namespace {

bool host_has_avx2() {
#if IRSTYLE_HAVE_AVX2 && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* forced = std::getenv("IRSTYLE_ISA");
  if (forced != nullptr && std::string_view(forced) == "scalar") return &scalar_table();
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

const KernelTable* avx2_table() {
#if IRSTYLE_HAVE_AVX2
  static const bool ok = host_has_avx2();
  return ok ? avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Isa detect() { return avx2_table() != nullptr ? Isa::avx2 : Isa::scalar; }

void select(Isa isa) {
  if (isa == Isa::avx2) {
    const KernelTable* t = avx2_table();
    if (t == nullptr) fail(ErrorKind::usage, "AVX2 kernels are not available on this host");
    current().store(t);
  } else {
    current().store(&scalar_table());
  }
}

}  // namespace irstyle::kernels
