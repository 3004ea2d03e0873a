#pragma once

// Data-parallel inner loops used by convolution, linear layers and the
// representation-distance code. Every routine has a scalar reference
// implementation; vector variants are picked once at runtime from what the
// CPU supports. Set ADVI_SIMD=scalar in the environment to force the
// reference path.

#include <cstddef>
#include <string_view>

namespace advi::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

struct Table {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // sum_i (a[i] - b[i])^2
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // sum_i w[i] * (a[i] - b[i])^2
  double (*weighted_squared_distance)(const double* a, const double* b,
                                      const double* w, std::size_t n);
};

const Table& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const Table& avx2_table();
#endif
#if defined(__aarch64__)
const Table& neon_table();
#endif

bool supported(Isa isa);
const Table& table_for(Isa isa);

// The table in use. Chosen on first call: the best supported ISA unless
// ADVI_SIMD names another one.
const Table& active();
// Overrides the active table; for equivalence tests and benchmarks.
void select(Isa isa);

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline double squared_distance(const double* a, const double* b,
                               std::size_t n) {
  return active().squared_distance(a, b, n);
}
inline double weighted_squared_distance(const double* a, const double* b,
                                        const double* w, std::size_t n) {
  return active().weighted_squared_distance(a, b, w, n);
}

}  // namespace advi::kernels
