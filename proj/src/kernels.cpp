#include "stratpred/kernels.hpp"

#include <cmath>

namespace stratpred::kernels {
namespace {

constexpr KernelTable kScalarTable{scalar::dot, scalar::squared_distance, scalar::axpy,
                                   scalar::scale, scalar::sum};
#if defined(STRATPRED_HAVE_AVX2)
constexpr KernelTable kAvx2Table{avx2::dot, avx2::squared_distance, avx2::axpy, avx2::scale,
                                 avx2::sum};
#endif

bool detect_avx2() {
#if defined(STRATPRED_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

struct Dispatch {
  Isa isa = Isa::Scalar;
  const KernelTable* table = &kScalarTable;

  Dispatch() { install(avx2_available() ? Isa::Avx2 : Isa::Scalar); }

  Isa install(Isa wanted) {
#if defined(STRATPRED_HAVE_AVX2)
    if (wanted == Isa::Avx2 && avx2_available()) {
      isa = Isa::Avx2;
      table = &kAvx2Table;
      return isa;
    }
#endif
    (void)wanted;
    isa = Isa::Scalar;
    table = &kScalarTable;
    return isa;
  }
};

Dispatch& dispatch() {
  static Dispatch d;
  return d;
}

}  // namespace

bool avx2_available() {
  static const bool ok = detect_avx2();
  return ok;
}

Isa active_isa() { return dispatch().isa; }

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

Isa set_isa(Isa isa) { return dispatch().install(isa); }

const KernelTable& table() { return *dispatch().table; }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = dot(a, a);
  const double nb = dot(b, b);
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot(a, b) / std::sqrt(na * nb);
}

}  // namespace stratpred::kernels
