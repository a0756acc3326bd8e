#pragma once

// Dense float kernels behind a runtime-selected table. The scalar table is the
// reference; the AVX2/FMA table is chosen when the CPU supports it unless
// SEGKIT_ISA=scalar is set. Double precision always uses the reference path.

#include <cstddef>
#include <string_view>

namespace segkit::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view to_string(Isa isa);

// C = alpha * op(A) * op(B) + beta * C, row-major. op(A) is m x k, op(B) is
// k x n. With beta == 0, C is not read.
using GemmFn = void (*)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                        float alpha, const float* a, std::size_t lda, const float* b,
                        std::size_t ldb, float beta, float* c, std::size_t ldc);

struct KernelTable {
  Isa isa;
  GemmFn gemm;
  float (*dot)(const float* x, const float* y, std::size_t n);
  void (*axpy)(std::size_t n, float alpha, const float* x, float* y);  // y += alpha * x
  void (*add)(std::size_t n, const float* x, const float* y, float* out);
  void (*mul)(std::size_t n, const float* x, const float* y, float* out);
  void (*scale)(std::size_t n, float alpha, const float* x, float* out);
  float (*sum)(const float* x, std::size_t n);
};

const KernelTable& scalar_table();
// Null when not compiled in or not supported by the running CPU.
const KernelTable* avx2_table();

const KernelTable& active();
// Throws InvalidArgument when the requested ISA is unavailable.
void set_active(Isa isa);
bool supported(Isa isa);

}  // namespace segkit::kernels
