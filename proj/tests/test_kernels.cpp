#include <cmath>
#include <vector>

#include "doctest.h"

#include "stratpred/kernels.hpp"
#include "stratpred/rng.hpp"

using namespace stratpred;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

bool close(double a, double b) { return std::fabs(a - b) <= 1e-12 * std::max(1.0, std::fabs(a)); }

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar kernels against naive loops") {
  Rng rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 16u, 33u}) {
    auto a = random_vector(rng, n);
    auto b = random_vector(rng, n);
    double dot = 0, dist = 0, sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += a[i] * b[i];
      dist += (a[i] - b[i]) * (a[i] - b[i]);
      sum += a[i];
    }
    CHECK(close(kernels::scalar::dot(a.data(), b.data(), n), dot));
    CHECK(close(kernels::scalar::squared_distance(a.data(), b.data(), n), dist));
    CHECK(close(kernels::scalar::sum(a.data(), n), sum));
  }
}

#if defined(STRATPRED_HAVE_AVX2)
TEST_CASE("avx2 variants match scalar, including tails") {
  if (!kernels::avx2_available()) {
    MESSAGE("AVX2 not supported on this CPU; skipped");
    return;
  }
  Rng rng(5);
  for (std::size_t n = 0; n <= 37; ++n) {
    CAPTURE(n);
    auto a = random_vector(rng, n);
    auto b = random_vector(rng, n);
    CHECK(close(kernels::avx2::dot(a.data(), b.data(), n), kernels::scalar::dot(a.data(), b.data(), n)));
    CHECK(close(kernels::avx2::squared_distance(a.data(), b.data(), n),
                kernels::scalar::squared_distance(a.data(), b.data(), n)));
    CHECK(close(kernels::avx2::sum(a.data(), n), kernels::scalar::sum(a.data(), n)));

    auto y1 = b, y2 = b;
    kernels::scalar::axpy(0.37, a.data(), y1.data(), n);
    kernels::avx2::axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i]));

    auto s1 = a, s2 = a;
    kernels::scalar::scale(-1.5, s1.data(), n);
    kernels::avx2::scale(-1.5, s2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(s1[i] == s2[i]);
  }
}
#endif

TEST_CASE("set_isa pins the dispatch table") {
  const auto before = kernels::active_isa();
  CHECK(kernels::set_isa(kernels::Isa::Scalar) == kernels::Isa::Scalar);
  CHECK(kernels::table().dot == &kernels::scalar::dot);
  const auto got = kernels::set_isa(kernels::Isa::Avx2);
  CHECK(got == (kernels::avx2_available() ? kernels::Isa::Avx2 : kernels::Isa::Scalar));
  kernels::set_isa(before);
}

TEST_CASE("cosine") {
  std::vector<double> a{1, 0, 0}, b{0, 2, 0}, c{3, 0, 0}, z{0, 0, 0};
  CHECK(kernels::cosine(a, b) == doctest::Approx(0.0));
  CHECK(kernels::cosine(a, c) == doctest::Approx(1.0));
  CHECK(kernels::cosine(a, z) == 0.0);
}

}
