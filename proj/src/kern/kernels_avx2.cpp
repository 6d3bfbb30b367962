#include "tables.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace ctaf::kern {
namespace {

void a2_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void a2_sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void a2_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void a2_madd(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(
        dst + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                 _mm256_loadu_pd(dst + i)));
  for (; i < n; ++i) dst[i] += a[i] * b[i];
}

void a2_scale(const double* a, double c, double* out, std::size_t n) {
  const __m256d cv = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), cv));
  for (; i < n; ++i) out[i] = a[i] * c;
}

void a2_axpy(double c, const double* x, double* y, std::size_t n) {
  const __m256d cv = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(cv, _mm256_loadu_pd(x + i),
                               _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += c * x[i];
}

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double a2_dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd(), acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1),
                                  _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double a2_sum(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i];
  return acc;
}

// exp via range reduction x = n*ln2 + r and a rational minimax approximant
// for exp(r) on |r| <= ln2/2 (Cephes coefficients), then a two-step 2^n
// rescale so subnormal/overflow edges behave.
constexpr double kExpMax = 709.782712893384;
constexpr double kExpMin = -745.133219101941;

void a2_vexp(const double* x, double* out, std::size_t n) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d hi = _mm256_set1_pd(kExpMax);
  const __m256d lo = _mm256_set1_pd(kExpMin);
  const __m256d inf = _mm256_set1_pd(HUGE_VAL);
  const __m128i bias = _mm_set1_epi32(1023);

  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d xv = _mm256_loadu_pd(x + i);
    __m256d over = _mm256_cmp_pd(xv, hi, _CMP_GT_OQ);
    __m256d under = _mm256_cmp_pd(xv, lo, _CMP_LT_OQ);

    __m256d nv = _mm256_round_pd(
        _mm256_mul_pd(xv, log2e),
        _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(nv, c1, xv);
    r = _mm256_fnmadd_pd(nv, c2, r);
    __m256d rr = _mm256_mul_pd(r, r);
    __m256d pe = _mm256_fmadd_pd(p0, rr, p1);
    pe = _mm256_fmadd_pd(pe, rr, p2);
    pe = _mm256_mul_pd(pe, r);
    __m256d qe = _mm256_fmadd_pd(q0, rr, q1);
    qe = _mm256_fmadd_pd(qe, rr, q2);
    qe = _mm256_fmadd_pd(qe, rr, q3);
    __m256d er = _mm256_fmadd_pd(
        two, _mm256_div_pd(pe, _mm256_sub_pd(qe, pe)), one);

    __m128i ni = _mm256_cvtpd_epi32(nv);
    __m128i n1 = _mm_srai_epi32(ni, 1);
    __m128i n2 = _mm_sub_epi32(ni, n1);
    __m256i e1 = _mm256_slli_epi64(
        _mm256_cvtepi32_epi64(_mm_add_epi32(n1, bias)), 52);
    __m256i e2 = _mm256_slli_epi64(
        _mm256_cvtepi32_epi64(_mm_add_epi32(n2, bias)), 52);
    er = _mm256_mul_pd(_mm256_mul_pd(er, _mm256_castsi256_pd(e1)),
                       _mm256_castsi256_pd(e2));

    er = _mm256_blendv_pd(er, _mm256_setzero_pd(), under);
    er = _mm256_blendv_pd(er, inf, over);
    _mm256_storeu_pd(out + i, er);
  }
  for (; i < n; ++i) out[i] = std::exp(x[i]);
}

void a2_gemm_nn(const double* A, const double* B, double* C, std::size_t M,
                std::size_t K, std::size_t N) {
  std::size_t j = 0;
  for (; j + 16 <= N; j += 16) {
    for (std::size_t i = 0; i < M; ++i) {
      double* cp = C + i * N + j;
      __m256d c0 = _mm256_loadu_pd(cp);
      __m256d c1 = _mm256_loadu_pd(cp + 4);
      __m256d c2 = _mm256_loadu_pd(cp + 8);
      __m256d c3 = _mm256_loadu_pd(cp + 12);
      const double* ap = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const __m256d a = _mm256_set1_pd(ap[k]);
        const double* bp = B + k * N + j;
        c0 = _mm256_fmadd_pd(a, _mm256_loadu_pd(bp), c0);
        c1 = _mm256_fmadd_pd(a, _mm256_loadu_pd(bp + 4), c1);
        c2 = _mm256_fmadd_pd(a, _mm256_loadu_pd(bp + 8), c2);
        c3 = _mm256_fmadd_pd(a, _mm256_loadu_pd(bp + 12), c3);
      }
      _mm256_storeu_pd(cp, c0);
      _mm256_storeu_pd(cp + 4, c1);
      _mm256_storeu_pd(cp + 8, c2);
      _mm256_storeu_pd(cp + 12, c3);
    }
  }
  for (; j + 4 <= N; j += 4) {
    for (std::size_t i = 0; i < M; ++i) {
      double* cp = C + i * N + j;
      __m256d c0 = _mm256_loadu_pd(cp);
      const double* ap = A + i * K;
      for (std::size_t k = 0; k < K; ++k)
        c0 = _mm256_fmadd_pd(_mm256_set1_pd(ap[k]),
                             _mm256_loadu_pd(B + k * N + j), c0);
      _mm256_storeu_pd(cp, c0);
    }
  }
  for (; j < N; ++j)
    for (std::size_t i = 0; i < M; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += A[i * K + k] * B[k * N + j];
      C[i * N + j] += acc;
    }
}

// Transposing B costs O(N*K) moves and turns the product into a plain nn
// gemm, which runs the register-blocked kernel instead of horizontal
// reductions.
void a2_gemm_nt(const double* A, const double* B, double* C, std::size_t M,
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
  a2_gemm_nn(A, Bt, C, M, K, N);
}

void a2_gemm_tn(const double* A, const double* B, double* C, std::size_t N,
                std::size_t K, std::size_t M) {
  std::size_t j = 0;
  for (; j + 16 <= M; j += 16) {
    std::size_t k = 0;
    for (; k + 2 <= K; k += 2) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c02 = _mm256_setzero_pd(), c03 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c12 = _mm256_setzero_pd(), c13 = _mm256_setzero_pd();
      for (std::size_t n = 0; n < N; ++n) {
        const __m256d a0 = _mm256_set1_pd(A[n * K + k]);
        const __m256d a1 = _mm256_set1_pd(A[n * K + k + 1]);
        const double* bp = B + n * M + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        const __m256d b2 = _mm256_loadu_pd(bp + 8);
        const __m256d b3 = _mm256_loadu_pd(bp + 12);
        c00 = _mm256_fmadd_pd(a0, b0, c00);
        c01 = _mm256_fmadd_pd(a0, b1, c01);
        c02 = _mm256_fmadd_pd(a0, b2, c02);
        c03 = _mm256_fmadd_pd(a0, b3, c03);
        c10 = _mm256_fmadd_pd(a1, b0, c10);
        c11 = _mm256_fmadd_pd(a1, b1, c11);
        c12 = _mm256_fmadd_pd(a1, b2, c12);
        c13 = _mm256_fmadd_pd(a1, b3, c13);
      }
      double* cp0 = C + k * M + j;
      double* cp1 = C + (k + 1) * M + j;
      _mm256_storeu_pd(cp0, _mm256_add_pd(_mm256_loadu_pd(cp0), c00));
      _mm256_storeu_pd(cp0 + 4, _mm256_add_pd(_mm256_loadu_pd(cp0 + 4), c01));
      _mm256_storeu_pd(cp0 + 8, _mm256_add_pd(_mm256_loadu_pd(cp0 + 8), c02));
      _mm256_storeu_pd(cp0 + 12, _mm256_add_pd(_mm256_loadu_pd(cp0 + 12), c03));
      _mm256_storeu_pd(cp1, _mm256_add_pd(_mm256_loadu_pd(cp1), c10));
      _mm256_storeu_pd(cp1 + 4, _mm256_add_pd(_mm256_loadu_pd(cp1 + 4), c11));
      _mm256_storeu_pd(cp1 + 8, _mm256_add_pd(_mm256_loadu_pd(cp1 + 8), c12));
      _mm256_storeu_pd(cp1 + 12, _mm256_add_pd(_mm256_loadu_pd(cp1 + 12), c13));
    }
    for (; k < K; ++k) {
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      __m256d c2 = _mm256_setzero_pd(), c3 = _mm256_setzero_pd();
      for (std::size_t n = 0; n < N; ++n) {
        const __m256d a = _mm256_set1_pd(A[n * K + k]);
        const double* bp = B + n * M + j;
        c0 = _mm256_fmadd_pd(a, _mm256_loadu_pd(bp), c0);
        c1 = _mm256_fmadd_pd(a, _mm256_loadu_pd(bp + 4), c1);
        c2 = _mm256_fmadd_pd(a, _mm256_loadu_pd(bp + 8), c2);
        c3 = _mm256_fmadd_pd(a, _mm256_loadu_pd(bp + 12), c3);
      }
      double* cp = C + k * M + j;
      _mm256_storeu_pd(cp, _mm256_add_pd(_mm256_loadu_pd(cp), c0));
      _mm256_storeu_pd(cp + 4, _mm256_add_pd(_mm256_loadu_pd(cp + 4), c1));
      _mm256_storeu_pd(cp + 8, _mm256_add_pd(_mm256_loadu_pd(cp + 8), c2));
      _mm256_storeu_pd(cp + 12, _mm256_add_pd(_mm256_loadu_pd(cp + 12), c3));
    }
  }
  for (; j < M; ++j) {
    for (std::size_t k = 0; k < K; ++k) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += A[n * K + k] * B[n * M + j];
      C[k * M + j] += acc;
    }
  }
}

}  // namespace

const KernelTable* avx2_table_or_null() {
  static const KernelTable t = {
      "avx2",  a2_add,  a2_sub, a2_mul, a2_madd,    a2_scale,   a2_axpy,
      a2_dot,  a2_sum,  a2_vexp, a2_gemm_nn, a2_gemm_nt, a2_gemm_tn,
  };
  return &t;
}

}  // namespace ctaf::kern

#else

namespace ctaf::kern {
const KernelTable* avx2_table_or_null() { return nullptr; }
}  // namespace ctaf::kern

#endif
