#include <atomic>
#include <cstdlib>
#include <string>

#include "segkit/error.hpp"
#include "segkit/kernels.hpp"
#include "segkit/kernels_ref.hpp"

namespace segkit::kernels {

#if defined(SEGKIT_HAVE_AVX2)
const KernelTable& avx2_table_unchecked();
#endif

namespace {

void gemm_scalar(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
                 float* c, std::size_t ldc) {
  ref::gemm<float>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

const KernelTable kScalar{
    Isa::kScalar,      gemm_scalar,      ref::dot<float>,   ref::axpy<float>,
    ref::add<float>,   ref::mul<float>,  ref::scale<float>, ref::sum<float>,
};

bool cpu_has_avx2() {
#if defined(SEGKIT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* env = std::getenv("SEGKIT_ISA");
  if (env != nullptr && std::string(env) == "scalar") return &kScalar;
  if (const KernelTable* t = avx2_table()) return t;
  return &kScalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(SEGKIT_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

bool supported(Isa isa) { return isa == Isa::kScalar || avx2_table() != nullptr; }

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void set_active(Isa isa) {
  if (isa == Isa::kScalar) {
    current().store(&kScalar);
    return;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr) throw InvalidArgument("avx2 kernels are not available on this CPU");
  current().store(t);
}

}  // namespace segkit::kernels
