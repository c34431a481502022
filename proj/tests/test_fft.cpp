#include <cmath>
#include <complex>
#include <vector>

#include "demonet/common.hpp"
#include "demonet/fft.hpp"
#include "doctest.h"

using demonet::kPi;
using demonet::Rng;
namespace fft = demonet::fft;

namespace {

// Brute-force DFT oracle.
std::vector<fft::cplx> dft(const std::vector<fft::cplx>& x) {
  const std::size_t n = x.size();
  std::vector<fft::cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    fft::cplx acc(0, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double ang = -2.0 * kPi * static_cast<double>(k) *
                         static_cast<double>(j) / static_cast<double>(n);
      acc += x[j] * fft::cplx(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

double max_err(const std::vector<fft::cplx>& a, const std::vector<fft::cplx>& b) {
  double m = 0.0, scale = 1.0;
  for (const auto& v : b) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]) / scale);
  return m;
}

}  // namespace

TEST_CASE("fft matches brute-force DFT for assorted sizes") {
  Rng rng(42);
  // Mix of powers of two, primes (853 is the DTIL frame length), and
  // composites (1600 is the DeepShip frame length).
  for (std::size_t n : {1, 2, 3, 4, 5, 7, 8, 16, 27, 64, 100, 128, 353, 853, 1600}) {
    std::vector<fft::cplx> x(n);
    for (auto& v : x) v = fft::cplx(rng.normal(), rng.normal());
    auto got = x;
    fft::fft(got, false);
    CHECK(max_err(got, dft(x)) < 1e-9);
  }
}

TEST_CASE("fft round-trips through its inverse") {
  Rng rng(7);
  for (std::size_t n : {8, 60, 853, 1024}) {
    std::vector<fft::cplx> x(n);
    for (auto& v : x) v = fft::cplx(rng.normal(), rng.normal());
    auto y = x;
    fft::fft(y, false);
    fft::fft(y, true);
    CHECK(max_err(y, x) < 1e-10);
  }
}

TEST_CASE("rfft agrees with complex fft and irfft inverts it") {
  Rng rng(3);
  for (std::size_t n : {16, 200, 853, 1600, 4096}) {
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    const auto bins = fft::rfft(x);
    REQUIRE(bins.size() == n / 2 + 1);
    std::vector<fft::cplx> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = fft::cplx(x[i], 0.0);
    fft::fft(z, false);
    double err = 0.0;
    for (std::size_t k = 0; k < bins.size(); ++k)
      err = std::max(err, std::abs(bins[k] - z[k]));
    CHECK(err < 1e-9 * std::sqrt(static_cast<double>(n)));

    const auto back = fft::irfft(bins, n);
    double rerr = 0.0;
    for (std::size_t i = 0; i < n; ++i) rerr = std::max(rerr, std::abs(back[i] - x[i]));
    CHECK(rerr < 1e-10 * std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("rfft of an on-bin sinusoid concentrates in its bin") {
  const std::size_t n = 1600;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = std::sin(2.0 * kPi * 50.0 * static_cast<double>(i) / static_cast<double>(n));
  const auto bins = fft::rfft(x);
  CHECK(std::abs(bins[50]) == doctest::Approx(n / 2.0).epsilon(1e-9));
  for (std::size_t k = 0; k < bins.size(); ++k) {
    if (k != 50) CHECK(std::abs(bins[k]) < 1e-8 * n);
  }
}
