#include "demonet/fft.hpp"

#include <cmath>

#include "demonet/common.hpp"

namespace demonet::fft {

namespace {

bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

// Bluestein chirp-z: arbitrary-length DFT via a power-of-two convolution.
void fft_bluestein(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  const std::size_t m = next_pow2(2 * n - 1);
  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for large n.
    const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    const double ang = kPi * static_cast<double>(k2) / static_cast<double>(n) *
                       (inverse ? -1.0 : 1.0);
    chirp[k] = cplx(std::cos(ang), -std::sin(ang));
  }
  std::vector<cplx> u(m, cplx(0, 0)), v(m, cplx(0, 0));
  for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
  v[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) {
    v[k] = std::conj(chirp[k]);
    v[m - k] = v[k];
  }
  fft_pow2(u, false);
  fft_pow2(v, false);
  for (std::size_t k = 0; k < m; ++k) u[k] *= v[k];
  fft_pow2(u, true);
  for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * chirp[k];
  if (inverse) {
    const double invn = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= invn;
  }
}

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft(std::vector<cplx>& a, bool inverse) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size())) {
    fft_pow2(a, inverse);
  } else {
    fft_bluestein(a, inverse);
  }
}

std::vector<cplx> rfft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  require(n > 0, "rfft: empty input");
  if (n % 2 == 0 && is_pow2(n)) {
    // Pack even/odd samples into one half-length complex FFT.
    const std::size_t h = n / 2;
    std::vector<cplx> z(h);
    for (std::size_t i = 0; i < h; ++i) z[i] = cplx(x[2 * i], x[2 * i + 1]);
    fft(z, false);
    std::vector<cplx> out(n / 2 + 1);
    for (std::size_t k = 0; k <= h; ++k) {
      const cplx zk = (k == h) ? z[0] : z[k];
      const cplx zc = std::conj((k == 0) ? z[0] : z[h - k]);
      const cplx even = 0.5 * (zk + zc);
      const cplx odd = cplx(0, -0.5) * (zk - zc);
      const double ang = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
      out[k] = even + cplx(std::cos(ang), std::sin(ang)) * odd;
    }
    return out;
  }
  std::vector<cplx> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = cplx(x[i], 0.0);
  fft(a, false);
  a.resize(n / 2 + 1);
  return a;
}

std::vector<double> irfft(const std::vector<cplx>& bins, std::size_t n) {
  require(bins.size() == n / 2 + 1, "irfft: bin count does not match length");
  std::vector<cplx> a(n);
  for (std::size_t k = 0; k < bins.size(); ++k) a[k] = bins[k];
  for (std::size_t k = bins.size(); k < n; ++k) a[k] = std::conj(bins[n - k]);
  fft(a, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace demonet::fft
