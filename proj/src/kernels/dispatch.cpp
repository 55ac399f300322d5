#include "sentinel/error.hpp"
#include "sentinel/kernels.hpp"

#include <atomic>

namespace sentinel::kernels {

namespace {

struct Table {
  double (*dot)(const double*, const double*, std::size_t) noexcept;
  double (*squared_distance)(const double*, const double*, std::size_t) noexcept;
  void (*axpy)(double, const double*, double*, std::size_t) noexcept;
};

constexpr Table kScalar{&scalar::dot, &scalar::squared_distance, &scalar::axpy};
#if SENTINEL_HAVE_AVX2
constexpr Table kAvx2{&avx2::dot, &avx2::squared_distance, &avx2::axpy};
#endif

bool detect_avx2() noexcept {
#if SENTINEL_HAVE_AVX2 && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend default_backend() noexcept {
  return detect_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& current() noexcept {
  static std::atomic<Backend> backend{default_backend()};
  return backend;
}

const Table& table() noexcept {
#if SENTINEL_HAVE_AVX2
  if (current().load(std::memory_order_relaxed) == Backend::Avx2) return kAvx2;
#endif
  return kScalar;
}

void check_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw DimensionMismatch(a, b);
}

}  // namespace

std::string_view backend_name(Backend b) noexcept {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

bool avx2_available() noexcept {
  static const bool available = detect_avx2();
  return available;
}

Backend active_backend() noexcept { return current().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_available()) {
    throw PreconditionError("AVX2 backend requested but not supported on this CPU");
  }
  current().store(b, std::memory_order_relaxed);
}

void reset_backend() noexcept { current().store(default_backend(), std::memory_order_relaxed); }

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_size(a.size(), b.size());
  return table().dot(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  check_same_size(a.size(), b.size());
  return table().squared_distance(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same_size(x.size(), y.size());
  table().axpy(alpha, x.data(), y.data(), x.size());
}

void gemm_accumulate(std::size_t n, std::size_t k, std::size_t m,
                     std::span<const double> a, std::span<const double> b, std::span<double> c) {
  if (a.size() != n * k) throw DimensionMismatch(a.size(), n * k);
  if (b.size() != k * m) throw DimensionMismatch(b.size(), k * m);
  if (c.size() != n * m) throw DimensionMismatch(c.size(), n * m);
  const auto axpy_fn = table().axpy;
  for (std::size_t i = 0; i < n; ++i) {
    double* c_row = c.data() + i * m;
    const double* a_row = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double scale = a_row[p];
      if (scale == 0.0) continue;
      axpy_fn(scale, b.data() + p * m, c_row, m);
    }
  }
}

}  // namespace sentinel::kernels
