#include "tables.hpp"

#if defined(__AVX512F__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace ctaf::kern {
namespace {

void a5_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(out + i, _mm512_add_pd(_mm512_loadu_pd(a + i),
                                            _mm512_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void a5_sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(out + i, _mm512_sub_pd(_mm512_loadu_pd(a + i),
                                            _mm512_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void a5_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(out + i, _mm512_mul_pd(_mm512_loadu_pd(a + i),
                                            _mm512_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void a5_madd(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(
        dst + i, _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i),
                                 _mm512_loadu_pd(dst + i)));
  for (; i < n; ++i) dst[i] += a[i] * b[i];
}

void a5_scale(const double* a, double c, double* out, std::size_t n) {
  const __m512d cv = _mm512_set1_pd(c);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(out + i, _mm512_mul_pd(_mm512_loadu_pd(a + i), cv));
  for (; i < n; ++i) out[i] = a[i] * c;
}

void a5_axpy(double c, const double* x, double* y, std::size_t n) {
  const __m512d cv = _mm512_set1_pd(c);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(
        y + i, _mm512_fmadd_pd(cv, _mm512_loadu_pd(x + i),
                               _mm512_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += c * x[i];
}

double a5_dot(const double* a, const double* b, std::size_t n) {
  __m512d acc0 = _mm512_setzero_pd(), acc1 = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), acc0);
    acc1 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i + 8), _mm512_loadu_pd(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), acc0);
  double acc = _mm512_reduce_add_pd(_mm512_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double a5_sum(const double* a, std::size_t n) {
  __m512d acc0 = _mm512_setzero_pd(), acc1 = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm512_add_pd(acc0, _mm512_loadu_pd(a + i));
    acc1 = _mm512_add_pd(acc1, _mm512_loadu_pd(a + i + 8));
  }
  for (; i + 8 <= n; i += 8) acc0 = _mm512_add_pd(acc0, _mm512_loadu_pd(a + i));
  double acc = _mm512_reduce_add_pd(_mm512_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i];
  return acc;
}

// Same range-reduction scheme as the AVX2 variant; see kernels_avx2.cpp.
constexpr double kExpMax = 709.782712893384;
constexpr double kExpMin = -745.133219101941;

void a5_vexp(const double* x, double* out, std::size_t n) {
  const __m512d log2e = _mm512_set1_pd(1.4426950408889634074);
  const __m512d c1 = _mm512_set1_pd(6.93145751953125e-1);
  const __m512d c2 = _mm512_set1_pd(1.42860682030941723212e-6);
  const __m512d p0 = _mm512_set1_pd(1.26177193074810590878e-4);
  const __m512d p1 = _mm512_set1_pd(3.02994407707441961300e-2);
  const __m512d p2 = _mm512_set1_pd(9.99999999999999999910e-1);
  const __m512d q0 = _mm512_set1_pd(3.00198505138664455042e-6);
  const __m512d q1 = _mm512_set1_pd(2.52448340349684104192e-3);
  const __m512d q2 = _mm512_set1_pd(2.27265548208155028766e-1);
  const __m512d q3 = _mm512_set1_pd(2.00000000000000000005e0);
  const __m512d one = _mm512_set1_pd(1.0);
  const __m512d two = _mm512_set1_pd(2.0);
  const __m512d hi = _mm512_set1_pd(kExpMax);
  const __m512d lo = _mm512_set1_pd(kExpMin);
  const __m512d inf = _mm512_set1_pd(HUGE_VAL);
  const __m256i bias = _mm256_set1_epi32(1023);

  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m512d xv = _mm512_loadu_pd(x + i);
    __mmask8 over = _mm512_cmp_pd_mask(xv, hi, _CMP_GT_OQ);
    __mmask8 under = _mm512_cmp_pd_mask(xv, lo, _CMP_LT_OQ);

    __m512d nv = _mm512_roundscale_pd(
        _mm512_mul_pd(xv, log2e),
        _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m512d r = _mm512_fnmadd_pd(nv, c1, xv);
    r = _mm512_fnmadd_pd(nv, c2, r);
    __m512d rr = _mm512_mul_pd(r, r);
    __m512d pe = _mm512_fmadd_pd(p0, rr, p1);
    pe = _mm512_fmadd_pd(pe, rr, p2);
    pe = _mm512_mul_pd(pe, r);
    __m512d qe = _mm512_fmadd_pd(q0, rr, q1);
    qe = _mm512_fmadd_pd(qe, rr, q2);
    qe = _mm512_fmadd_pd(qe, rr, q3);
    __m512d er = _mm512_fmadd_pd(
        two, _mm512_div_pd(pe, _mm512_sub_pd(qe, pe)), one);

    __m256i ni = _mm512_cvtpd_epi32(nv);
    __m256i n1 = _mm256_srai_epi32(ni, 1);
    __m256i n2 = _mm256_sub_epi32(ni, n1);
    __m512i e1 = _mm512_slli_epi64(
        _mm512_cvtepi32_epi64(_mm256_add_epi32(n1, bias)), 52);
    __m512i e2 = _mm512_slli_epi64(
        _mm512_cvtepi32_epi64(_mm256_add_epi32(n2, bias)), 52);
    er = _mm512_mul_pd(_mm512_mul_pd(er, _mm512_castsi512_pd(e1)),
                       _mm512_castsi512_pd(e2));

    er = _mm512_mask_blend_pd(under, er, _mm512_setzero_pd());
    er = _mm512_mask_blend_pd(over, er, inf);
    _mm512_storeu_pd(out + i, er);
  }
  for (; i < n; ++i) out[i] = std::exp(x[i]);
}

// 4x16 register block: per k step, two B loads and four broadcasts feed
// eight FMAs, so the loop is FMA-bound instead of load-bound.
void a5_gemm_nn(const double* A, const double* B, double* C, std::size_t M,
                std::size_t K, std::size_t N) {
  std::size_t j = 0;
  for (; j + 16 <= N; j += 16) {
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      const double* a0 = A + i * K;
      const double* a1 = a0 + K;
      const double* a2 = a1 + K;
      const double* a3 = a2 + K;
      double* c0 = C + i * N + j;
      double* c1 = c0 + N;
      double* c2 = c1 + N;
      double* c3 = c2 + N;
      __m512d s00 = _mm512_loadu_pd(c0), s01 = _mm512_loadu_pd(c0 + 8);
      __m512d s10 = _mm512_loadu_pd(c1), s11 = _mm512_loadu_pd(c1 + 8);
      __m512d s20 = _mm512_loadu_pd(c2), s21 = _mm512_loadu_pd(c2 + 8);
      __m512d s30 = _mm512_loadu_pd(c3), s31 = _mm512_loadu_pd(c3 + 8);
      for (std::size_t k = 0; k < K; ++k) {
        const double* bp = B + k * N + j;
        const __m512d b0 = _mm512_loadu_pd(bp);
        const __m512d b1 = _mm512_loadu_pd(bp + 8);
        __m512d av = _mm512_set1_pd(a0[k]);
        s00 = _mm512_fmadd_pd(av, b0, s00);
        s01 = _mm512_fmadd_pd(av, b1, s01);
        av = _mm512_set1_pd(a1[k]);
        s10 = _mm512_fmadd_pd(av, b0, s10);
        s11 = _mm512_fmadd_pd(av, b1, s11);
        av = _mm512_set1_pd(a2[k]);
        s20 = _mm512_fmadd_pd(av, b0, s20);
        s21 = _mm512_fmadd_pd(av, b1, s21);
        av = _mm512_set1_pd(a3[k]);
        s30 = _mm512_fmadd_pd(av, b0, s30);
        s31 = _mm512_fmadd_pd(av, b1, s31);
      }
      _mm512_storeu_pd(c0, s00);
      _mm512_storeu_pd(c0 + 8, s01);
      _mm512_storeu_pd(c1, s10);
      _mm512_storeu_pd(c1 + 8, s11);
      _mm512_storeu_pd(c2, s20);
      _mm512_storeu_pd(c2 + 8, s21);
      _mm512_storeu_pd(c3, s30);
      _mm512_storeu_pd(c3 + 8, s31);
    }
    for (; i < M; ++i) {
      double* cp = C + i * N + j;
      __m512d c0 = _mm512_loadu_pd(cp);
      __m512d c1 = _mm512_loadu_pd(cp + 8);
      const double* ap = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const __m512d a = _mm512_set1_pd(ap[k]);
        const double* bp = B + k * N + j;
        c0 = _mm512_fmadd_pd(a, _mm512_loadu_pd(bp), c0);
        c1 = _mm512_fmadd_pd(a, _mm512_loadu_pd(bp + 8), c1);
      }
      _mm512_storeu_pd(cp, c0);
      _mm512_storeu_pd(cp + 8, c1);
    }
  }
  for (; j + 8 <= N; j += 8) {
    for (std::size_t i = 0; i < M; ++i) {
      double* cp = C + i * N + j;
      __m512d c0 = _mm512_loadu_pd(cp);
      const double* ap = A + i * K;
      for (std::size_t k = 0; k < K; ++k)
        c0 = _mm512_fmadd_pd(_mm512_set1_pd(ap[k]),
                             _mm512_loadu_pd(B + k * N + j), c0);
      _mm512_storeu_pd(cp, c0);
    }
  }
  for (; j < N; ++j)
    for (std::size_t i = 0; i < M; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += A[i * K + k] * B[k * N + j];
      C[i * N + j] += acc;
    }
}

// Same trick as gemm_tn below: transposing B costs O(N*K) moves and turns
// the product into a plain nn gemm, which runs the register-blocked kernel
// instead of horizontal-reduction dot products.
void a5_gemm_nt(const double* A, const double* B, double* C, std::size_t M,
                std::size_t K, std::size_t N) {
  thread_local std::vector<double> scratch;
  scratch.resize(K * N);
  double* Bt = scratch.data();
  constexpr std::size_t TB = 32;
  for (std::size_t n0 = 0; n0 < N; n0 += TB) {
    const std::size_t nmax = std::min(n0 + TB, N);
    for (std::size_t k0 = 0; k0 < K; k0 += TB) {
      const std::size_t kmax = std::min(k0 + TB, K);
      for (std::size_t n = n0; n < nmax; ++n)
        for (std::size_t k = k0; k < kmax; ++k) Bt[k * N + n] = B[n * K + k];
    }
  }
  a5_gemm_nn(A, Bt, C, M, K, N);
}

// Transposing A first costs O(N*K) moves but lets the O(N*K*M) product run
// through the register-blocked nn kernel, which wins for every shape this
// code path sees.
void a5_gemm_tn(const double* A, const double* B, double* C, std::size_t N,
                std::size_t K, std::size_t M) {
  thread_local std::vector<double> scratch;
  scratch.resize(K * N);
  double* At = scratch.data();
  constexpr std::size_t TB = 32;
  for (std::size_t n0 = 0; n0 < N; n0 += TB) {
    const std::size_t nmax = std::min(n0 + TB, N);
    for (std::size_t k0 = 0; k0 < K; k0 += TB) {
      const std::size_t kmax = std::min(k0 + TB, K);
      for (std::size_t n = n0; n < nmax; ++n)
        for (std::size_t k = k0; k < kmax; ++k) At[k * N + n] = A[n * K + k];
    }
  }
  a5_gemm_nn(At, B, C, K, N, M);
}

}  // namespace

const KernelTable* avx512_table_or_null() {
  static const KernelTable t = {
      "avx512", a5_add,  a5_sub, a5_mul, a5_madd,    a5_scale,   a5_axpy,
      a5_dot,   a5_sum,  a5_vexp, a5_gemm_nn, a5_gemm_nt, a5_gemm_tn,
  };
  return &t;
}

}  // namespace ctaf::kern

#else

namespace ctaf::kern {
const KernelTable* avx512_table_or_null() { return nullptr; }
}  // namespace ctaf::kern

#endif
