#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace demonet::fft {

using cplx = std::complex<double>;

// In-place complex FFT. Power-of-two sizes use iterative radix-2; everything
// else goes through Bluestein's chirp-z, so prime frame lengths (853 samples
// at 17067 Hz) work at O(n log n).
void fft(std::vector<cplx>& a, bool inverse);

// Real-input FFT of x (length n taken from x), returning n/2+1 bins.
std::vector<cplx> rfft(const std::vector<double>& x);

// Inverse of rfft: n output samples from n/2+1 bins.
std::vector<double> irfft(const std::vector<cplx>& bins, std::size_t n);

std::size_t next_pow2(std::size_t n);

}  // namespace demonet::fft
