#include <cmath>
#include <cstddef>

#include "ctaf/kern/kernels.hpp"

// Reference implementations: the simplest correct loops. SIMD variants are
// tested against these.

namespace ctaf::kern {
namespace {

void s_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_madd(const double* a, const double* b, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += a[i] * b[i];
}

void s_scale(const double* a, double c, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * c;
}

void s_axpy(double c, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double s_sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

void s_vexp(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void s_gemm_nn(const double* A, const double* B, double* C, std::size_t M,
               std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      const double* brow = B + k * N;
      double* crow = C + i * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

void s_gemm_nt(const double* A, const double* B, double* C, std::size_t M,
               std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      const double* arow = A + i * K;
      const double* brow = B + j * K;
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
      C[i * N + j] += acc;
    }
  }
}

void s_gemm_tn(const double* A, const double* B, double* C, std::size_t N,
               std::size_t K, std::size_t M) {
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[n * K + k];
      const double* brow = B + n * M;
      double* crow = C + k * M;
      for (std::size_t j = 0; j < M; ++j) crow[j] += a * brow[j];
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t = {
      "scalar", s_add,  s_sub, s_mul, s_madd,    s_scale,   s_axpy,
      s_dot,    s_sum,  s_vexp, s_gemm_nn, s_gemm_nt, s_gemm_tn,
  };
  return t;
}

}  // namespace ctaf::kern
