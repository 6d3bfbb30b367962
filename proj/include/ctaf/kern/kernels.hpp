#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Dense f64 primitives behind every tensor op. Each entry point has a plain
// scalar reference implementation plus SIMD variants (AVX2+FMA, AVX-512F)
// compiled into separate translation units with their own ISA flags. The
// active table is picked once at startup from CPUID, overridable through the
// CTAF_KERNELS environment variable or set_active() in tests.
//
// Contracts shared by all variants:
//   gemm_*   accumulate:  C += op(A) * op(B).  Callers zero C first.
//   axpy     y += c * x
//   vexp     out[i] = exp(x[i]); underflow clamps to 0, overflow to +inf.
// Variants agree with the scalar reference to tight tolerances (bitwise for
// non-fused elementwise ops); the equivalence suite pins this down.

namespace ctaf::kern {

struct KernelTable {
  const char* name;

  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*madd)(const double* a, const double* b, double* dst, std::size_t n);  // dst += a*b
  void (*scale)(const double* a, double c, double* out, std::size_t n);
  void (*axpy)(double c, const double* x, double* y, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  void (*vexp)(const double* x, double* out, std::size_t n);

  // Row-major. gemm_nn: C[M,N] += A[M,K] B[K,N].
  void (*gemm_nn)(const double* A, const double* B, double* C, std::size_t M,
                  std::size_t K, std::size_t N);
  // gemm_nt: C[M,N] += A[M,K] B[N,K]^T.
  void (*gemm_nt)(const double* A, const double* B, double* C, std::size_t M,
                  std::size_t K, std::size_t N);
  // gemm_tn: C[K,M] += A[N,K]^T B[N,M].
  void (*gemm_tn)(const double* A, const double* B, double* C, std::size_t N,
                  std::size_t K, std::size_t M);
};

const KernelTable& scalar_table();

// Variants present in this build AND supported by the running CPU.
std::vector<std::string> available();

// Table by name ("scalar", "avx2", "avx512"); throws ConfigError if the
// variant is unavailable on this machine or was not compiled in.
const KernelTable& table(std::string_view name);

// Fastest available variant, or the CTAF_KERNELS override if set.
const KernelTable& active();

// Force a variant (tests). Affects subsequent active() calls.
void set_active(std::string_view name);

}  // namespace ctaf::kern
