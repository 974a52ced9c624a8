#pragma once

// Dense double-precision inner loops shared by every model in the library.
//
// Each kernel has a portable scalar reference in kernels::scalar and, on x86-64
// builds, an AVX2/FMA variant in kernels::avx2. The free functions in
// kernels:: dispatch through a table chosen once at startup from CPUID; tests
// may pin the table with set_isa(). Both variants accumulate in a fixed order,
// so results are reproducible for a given ISA.

#include <cstddef>
#include <span>
#include <string_view>

namespace stratpred::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*scale)(double alpha, double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
};

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace scalar

#if defined(STRATPRED_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace avx2
#endif

/// True when the binary carries the AVX2 variant and the CPU supports AVX2+FMA.
bool avx2_available();

Isa active_isa();
std::string_view isa_name(Isa isa);

/// Pins the dispatch table. Requesting Avx2 on an unsupported machine falls back
/// to Scalar; the return value is the ISA actually installed.
Isa set_isa(Isa isa);

const KernelTable& table();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return table().dot(a.data(), b.data(), a.size());
}
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return table().squared_distance(a.data(), b.data(), a.size());
}
/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  table().axpy(alpha, x.data(), y.data(), x.size());
}
inline void scale(double alpha, std::span<double> x) { table().scale(alpha, x.data(), x.size()); }
inline double sum(std::span<const double> x) { return table().sum(x.data(), x.size()); }

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace stratpred::kernels
