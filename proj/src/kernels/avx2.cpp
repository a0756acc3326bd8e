// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "segkit/kernels.hpp"

namespace segkit::kernels {
namespace {

__m256i tail_mask(std::size_t width) {
  alignas(32) static const int kLanes[16] = {-1, -1, -1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kLanes + 8 - width));
}

float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

void store_block(__m256 acc, float* c, __m256i mask, bool full, float alpha, float beta) {
  __m256 out = _mm256_mul_ps(_mm256_set1_ps(alpha), acc);
  if (beta != 0.0f) {
    const __m256 old = full ? _mm256_loadu_ps(c) : _mm256_maskload_ps(c, mask);
    out = _mm256_fmadd_ps(_mm256_set1_ps(beta), old, out);
  }
  if (full) {
    _mm256_storeu_ps(c, out);
  } else {
    _mm256_maskstore_ps(c, mask, out);
  }
}

// R rows of C by 16 full columns.
template <int R>
void block_full(std::size_t k, const float* a, std::size_t a_rs, std::size_t a_cs, const float* b,
                std::size_t ldb, float* c, std::size_t ldc, float alpha, float beta) {
  __m256 acc0[R];
  __m256 acc1[R];
  for (int r = 0; r < R; ++r) acc0[r] = acc1[r] = _mm256_setzero_ps();
  for (std::size_t p = 0; p < k; ++p) {
    const float* brow = b + p * ldb;
    const __m256 b0 = _mm256_loadu_ps(brow);
    const __m256 b1 = _mm256_loadu_ps(brow + 8);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + static_cast<std::size_t>(r) * a_rs + p * a_cs);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  const __m256i none = _mm256_setzero_si256();
  for (int r = 0; r < R; ++r) {
    float* crow = c + static_cast<std::size_t>(r) * ldc;
    store_block(acc0[r], crow, none, true, alpha, beta);
    store_block(acc1[r], crow + 8, none, true, alpha, beta);
  }
}

// R rows of C by `width` < 16 columns, masked.
template <int R>
void block_tail(std::size_t k, const float* a, std::size_t a_rs, std::size_t a_cs, const float* b,
                std::size_t ldb, float* c, std::size_t ldc, std::size_t width, float alpha,
                float beta) {
  const std::size_t w0 = std::min<std::size_t>(width, 8);
  const std::size_t w1 = width > 8 ? width - 8 : 0;
  const __m256i m0 = tail_mask(w0);
  const __m256i m1 = tail_mask(w1);
  __m256 acc0[R];
  __m256 acc1[R];
  for (int r = 0; r < R; ++r) acc0[r] = acc1[r] = _mm256_setzero_ps();
  for (std::size_t p = 0; p < k; ++p) {
    const float* brow = b + p * ldb;
    const __m256 b0 = _mm256_maskload_ps(brow, m0);
    const __m256 b1 = w1 > 0 ? _mm256_maskload_ps(brow + 8, m1) : _mm256_setzero_ps();
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + static_cast<std::size_t>(r) * a_rs + p * a_cs);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    float* crow = c + static_cast<std::size_t>(r) * ldc;
    store_block(acc0[r], crow, m0, w0 == 8, alpha, beta);
    if (w1 > 0) store_block(acc1[r], crow + 8, m1, false, alpha, beta);
  }
}

template <int R>
void row_panel(std::size_t n, std::size_t k, const float* a, std::size_t a_rs, std::size_t a_cs,
               const float* b, std::size_t ldb, float* c, std::size_t ldc, float alpha,
               float beta) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) block_full<R>(k, a, a_rs, a_cs, b + j, ldb, c + j, ldc, alpha, beta);
  if (j < n) block_tail<R>(k, a, a_rs, a_cs, b + j, ldb, c + j, ldc, n - j, alpha, beta);
}

void gemm_avx2(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
               const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
               float* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  thread_local std::vector<float> scratch;
  if (tb) {
    // op(B) = B^T with B stored n x k; materialize it k x n.
    scratch.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * ldb + p];
    }
    b = scratch.data();
    ldb = n;
  }
  const std::size_t a_rs = ta ? 1 : lda;
  const std::size_t a_cs = ta ? lda : 1;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    row_panel<4>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc, alpha, beta);
  }
  switch (m - i) {
    case 3:
      row_panel<3>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc, alpha, beta);
      break;
    case 2:
      row_panel<2>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc, alpha, beta);
      break;
    case 1:
      row_panel<1>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc, alpha, beta);
      break;
    default:
      break;
  }
}

float dot_avx2(const float* x, const float* y, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  }
  float total = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) total += x[i] * y[i];
  return total;
}

void axpy_avx2(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_avx2(std::size_t n, const float* x, const float* y, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_avx2(std::size_t n, const float* x, const float* y, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_avx2(std::size_t n, float alpha, const float* x, float* out) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

float sum_avx2(const float* x, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float total = hsum(acc);
  for (; i < n; ++i) total += x[i];
  return total;
}

const KernelTable kAvx2{
    Isa::kAvx2, gemm_avx2, dot_avx2, axpy_avx2, add_avx2, mul_avx2, scale_avx2, sum_avx2,
};

}  // namespace

const KernelTable& avx2_table_unchecked() { return kAvx2; }

}  // namespace segkit::kernels
