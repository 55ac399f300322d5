#pragma once

// Dense double-precision inner loops used by the embedding distance, the
// dense layers, and the attention blocks. Two implementations exist: a
// portable scalar reference and an AVX2/FMA variant. The variant is picked
// once at startup from CPUID; tests may pin either one.

#include <cstddef>
#include <span>
#include <string_view>

namespace sentinel::kernels {

enum class Backend { Scalar, Avx2 };

std::string_view backend_name(Backend b) noexcept;

// True when the running CPU supports AVX2 and FMA and the AVX2 variant was
// compiled in.
bool avx2_available() noexcept;

Backend active_backend() noexcept;

// Pins the backend for the whole process. Requesting Avx2 on a machine
// without it throws sentinel::PreconditionError.
void set_backend(Backend b);

// Restores the CPUID-selected default.
void reset_backend() noexcept;

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);

// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// C(n x m) += A(n x k) * B(k x m), all row-major and densely packed.
void gemm_accumulate(std::size_t n, std::size_t k, std::size_t m,
                     std::span<const double> a, std::span<const double> b, std::span<double> c);

// Per-backend entry points. Exposed for equivalence testing.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n) noexcept;
double squared_distance(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n) noexcept;
double squared_distance(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
}  // namespace avx2

}  // namespace sentinel::kernels
