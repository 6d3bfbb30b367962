#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "ctaf/common/errors.hpp"
#include "ctaf/kern/kernels.hpp"
#include "ctaf/num/rng.hpp"

using ctaf::kern::KernelTable;
using ctaf::num::Rng;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -2.0,
                               double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

std::vector<const KernelTable*> simd_variants() {
  std::vector<const KernelTable*> out;
  for (const auto& name : ctaf::kern::available())
    if (name != "scalar") out.push_back(&ctaf::kern::table(name));
  return out;
}

const std::vector<std::size_t> kSizes = {1, 3, 4, 7, 8, 15, 16, 17, 33, 100, 257};

}  // namespace

TEST_CASE("elementwise variants match scalar bitwise where no FMA is involved") {
  const auto& ref = ctaf::kern::scalar_table();
  Rng rng(101);
  for (const KernelTable* t : simd_variants()) {
    for (std::size_t n : kSizes) {
      const auto a = random_vec(rng, n), b = random_vec(rng, n);
      std::vector<double> r1(n), r2(n);

      ref.add(a.data(), b.data(), r1.data(), n);
      t->add(a.data(), b.data(), r2.data(), n);
      CHECK(r1 == r2);

      ref.sub(a.data(), b.data(), r1.data(), n);
      t->sub(a.data(), b.data(), r2.data(), n);
      CHECK(r1 == r2);

      ref.mul(a.data(), b.data(), r1.data(), n);
      t->mul(a.data(), b.data(), r2.data(), n);
      CHECK(r1 == r2);

      ref.scale(a.data(), 1.7, r1.data(), n);
      t->scale(a.data(), 1.7, r2.data(), n);
      CHECK(r1 == r2);
    }
  }
}

TEST_CASE("fused ops match scalar within tight tolerance") {
  const auto& ref = ctaf::kern::scalar_table();
  Rng rng(202);
  for (const KernelTable* t : simd_variants()) {
    for (std::size_t n : kSizes) {
      const auto a = random_vec(rng, n), b = random_vec(rng, n);
      auto y1 = random_vec(rng, n);
      auto y2 = y1;

      ref.axpy(0.37, a.data(), y1.data(), n);
      t->axpy(0.37, a.data(), y2.data(), n);
      CHECK(max_rel_diff(y1, y2) < 1e-15);

      auto m1 = b, m2 = b;
      ref.madd(a.data(), y1.data(), m1.data(), n);
      t->madd(a.data(), y2.data(), m2.data(), n);
      CHECK(max_rel_diff(m1, m2) < 1e-14);

      const double d1 = ref.dot(a.data(), b.data(), n);
      const double d2 = t->dot(a.data(), b.data(), n);
      CHECK(std::fabs(d1 - d2) <= 1e-13 * std::max(1.0, std::fabs(d1)));

      const double s1 = ref.sum(a.data(), n);
      const double s2 = t->sum(a.data(), n);
      CHECK(std::fabs(s1 - s2) <= 1e-13 * std::max(1.0, std::fabs(s1)));
    }
  }
}

TEST_CASE("vexp matches libm closely and clamps at the extremes") {
  const auto& ref = ctaf::kern::scalar_table();
  Rng rng(303);
  for (const KernelTable* t : simd_variants()) {
    std::vector<double> x(4096);
    for (auto& v : x) v = rng.uniform(-60.0, 60.0);
    // edge lanes
    x[0] = 0.0;
    x[1] = -1000.0;
    x[2] = 1000.0;
    x[3] = 709.0;
    x[4] = -708.0;
    x[5] = -745.5;
    std::vector<double> e1(x.size()), e2(x.size());
    ref.vexp(x.data(), e1.data(), x.size());
    t->vexp(x.data(), e2.data(), x.size());
    CHECK(e2[0] == 1.0);
    CHECK(e2[1] == 0.0);
    CHECK(std::isinf(e2[2]));
    CHECK(e2[5] == 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::isinf(e1[i]) || std::isinf(e2[i])) {
        CHECK(std::isinf(e1[i]) == std::isinf(e2[i]));
        continue;
      }
      const double denom = std::max(e1[i], std::numeric_limits<double>::min());
      CHECK(std::fabs(e1[i] - e2[i]) / denom < 1e-14);
    }
  }
}

TEST_CASE("gemm variants match the scalar reference") {
  const auto& ref = ctaf::kern::scalar_table();
  Rng rng(404);
  const std::vector<std::array<std::size_t, 3>> shapes = {
      {1, 1, 1},   {2, 3, 4},   {5, 7, 9},    {16, 16, 16}, {17, 5, 33},
      {4, 64, 64}, {64, 64, 4}, {40, 64, 67}, {3, 128, 96}, {33, 17, 31}};
  for (const KernelTable* t : simd_variants()) {
    for (const auto& [M, K, N] : shapes) {
      const auto A = random_vec(rng, M * K);
      const auto B = random_vec(rng, K * N);
      std::vector<double> C1(M * N, 0.5), C2(M * N, 0.5);
      ref.gemm_nn(A.data(), B.data(), C1.data(), M, K, N);
      t->gemm_nn(A.data(), B.data(), C2.data(), M, K, N);
      CHECK(max_rel_diff(C1, C2) < 1e-13);

      const auto Bt = random_vec(rng, N * K);
      std::fill(C1.begin(), C1.end(), -0.25);
      std::fill(C2.begin(), C2.end(), -0.25);
      ref.gemm_nt(A.data(), Bt.data(), C1.data(), M, K, N);
      t->gemm_nt(A.data(), Bt.data(), C2.data(), M, K, N);
      CHECK(max_rel_diff(C1, C2) < 1e-13);

      // gemm_tn: A [N,K], B [N,M] -> C [K,M]
      const auto At = random_vec(rng, N * K);
      const auto Bn = random_vec(rng, N * M);
      std::vector<double> D1(K * M, 0.0), D2(K * M, 0.0);
      ref.gemm_tn(At.data(), Bn.data(), D1.data(), N, K, M);
      t->gemm_tn(At.data(), Bn.data(), D2.data(), N, K, M);
      CHECK(max_rel_diff(D1, D2) < 1e-13);
    }
  }
}

TEST_CASE("gemm accumulates into existing output") {
  const auto& K = ctaf::kern::active();
  const std::vector<double> A = {1.0, 2.0};
  const std::vector<double> B = {3.0, 4.0};
  std::vector<double> C = {10.0};
  K.gemm_nn(A.data(), B.data(), C.data(), 1, 2, 1);
  CHECK(C[0] == doctest::Approx(10.0 + 11.0));
}

TEST_CASE("kernel dispatch honors overrides and reports availability") {
  const auto avail = ctaf::kern::available();
  REQUIRE(!avail.empty());
  CHECK(avail.front() == "scalar");
  ctaf::kern::set_active("scalar");
  CHECK(std::string(ctaf::kern::active().name) == "scalar");
  ctaf::kern::set_active(avail.back());
  CHECK(std::string(ctaf::kern::active().name) == avail.back());
  CHECK_THROWS_AS(ctaf::kern::table("no-such-variant"), ctaf::ConfigError);
}
