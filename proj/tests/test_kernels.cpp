#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "sentinel/error.hpp"
#include "sentinel/kernels.hpp"

namespace k = sentinel::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Long-double accumulation as an independent reference.
long double ref_dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

long double magnitude(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(static_cast<long double>(a[i]) * b[i]);
  return s;
}

// Odd lengths cover the tail after the 4-wide body.
const std::size_t kLengths[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 67, 130, 1001};

}  // namespace

TEST_CASE("scalar kernels agree with a long-double reference") {
  std::mt19937_64 rng(11);
  for (std::size_t n : kLengths) {
    const auto a = random_vec(n, rng), b = random_vec(n, rng);
    const double tol = 1e-14 * static_cast<double>(magnitude(a, b)) + 1e-300;
    CHECK(std::fabs(k::scalar::dot(a.data(), b.data(), n) - static_cast<double>(ref_dot(a, b))) <= tol);

    long double sq = 0;
    for (std::size_t i = 0; i < n; ++i) sq += (static_cast<long double>(a[i]) - b[i]) * (static_cast<long double>(a[i]) - b[i]);
    CHECK(std::fabs(k::scalar::squared_distance(a.data(), b.data(), n) - static_cast<double>(sq)) <=
          1e-13 * static_cast<double>(sq) + 1e-300);
  }
}

TEST_CASE("avx2 kernels match scalar kernels") {
  if (!k::avx2_available()) {
    MESSAGE("AVX2/FMA not available on this CPU; equivalence not exercised");
    return;
  }
  std::mt19937_64 rng(12);
  for (std::size_t n : kLengths) {
    const auto a = random_vec(n, rng), b = random_vec(n, rng);
    // Different summation order and fused multiply-add: agreement is to
    // rounding, scaled by the magnitude of the terms.
    const double tol = 1e-14 * static_cast<double>(magnitude(a, b)) + 1e-300;
    CHECK(std::fabs(k::avx2::dot(a.data(), b.data(), n) - k::scalar::dot(a.data(), b.data(), n)) <= tol);
    const double sd = k::scalar::squared_distance(a.data(), b.data(), n);
    CHECK(std::fabs(k::avx2::squared_distance(a.data(), b.data(), n) - sd) <= 1e-13 * sd + 1e-300);

    auto y1 = random_vec(n, rng);
    auto y2 = y1;
    k::scalar::axpy(0.37, a.data(), y1.data(), n);
    k::avx2::axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::fabs(y1[i] - y2[i]) <= 1e-14 * (std::fabs(y1[i]) + 1.0));
  }
}

TEST_CASE("gemm_accumulate matches a triple loop on every backend") {
  std::mt19937_64 rng(13);
  const std::size_t n = 7, kk = 13, m = 9;
  const auto a = random_vec(n * kk, rng), b = random_vec(kk * m, rng), c0 = random_vec(n * m, rng);
  std::vector<double> expect = c0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t p = 0; p < kk; ++p) expect[i * m + j] += a[i * kk + p] * b[p * m + j];

  std::vector<k::Backend> backends{k::Backend::Scalar};
  if (k::avx2_available()) backends.push_back(k::Backend::Avx2);
  for (k::Backend be : backends) {
    k::set_backend(be);
    auto c = c0;
    k::gemm_accumulate(n, kk, m, a, b, c);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
  k::reset_backend();
}

TEST_CASE("dispatch honours the pinned backend and rejects bad shapes") {
  k::set_backend(k::Backend::Scalar);
  CHECK(k::active_backend() == k::Backend::Scalar);
  k::reset_backend();
  CHECK(k::active_backend() == (k::avx2_available() ? k::Backend::Avx2 : k::Backend::Scalar));

  std::vector<double> a(3, 1.0), b(4, 1.0);
  CHECK_THROWS_AS(k::dot(a, b), sentinel::DimensionMismatch);
  CHECK_THROWS_AS(k::axpy(1.0, a, b), sentinel::DimensionMismatch);
  std::vector<double> c(1);
  CHECK_THROWS_AS(k::gemm_accumulate(1, 2, 1, a, b, c), sentinel::DimensionMismatch);
  if (!k::avx2_available()) CHECK_THROWS_AS(k::set_backend(k::Backend::Avx2), sentinel::PreconditionError);
}
