#pragma once

#include <string>
#include <vector>

#include "demonet/dsp.hpp"

namespace demonet::features {

enum class SpectrogramKind { stft_amplitude, log_mel, log_cqt };

struct Spectrogram {
  std::vector<double> values;  // row-major [n_frames x n_bins]
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  SpectrogramKind kind = SpectrogramKind::stft_amplitude;
  std::vector<double> bin_freqs_hz;
  std::vector<double> frame_times_s;

  const double* row(std::size_t i) const { return values.data() + i * n_bins; }
  double* row(std::size_t i) { return values.data() + i * n_bins; }
  void validate() const;
};

struct MelFilterBank {
  std::vector<double> weights;  // [n_mels x n_fft_bins]
  std::size_t n_mels = 0;
  std::size_t n_fft_bins = 0;   // bins of the (passband-restricted) STFT
  std::vector<double> center_freqs_hz;
};

struct CqtKernel {
  int bins_per_octave = 30;     // b
  double f_min_hz = 0.0;
  double f_max_hz = 0.0;
  double q = 0.0;               // 1 / (2^(1/b) - 1)
  std::vector<double> center_freqs_hz;   // f_k = 2^(k/b) f_min
  std::vector<double> bandwidths_hz;     // f_k / Q
  std::vector<double> kernel;            // [K x n_fft_bins]
  std::size_t n_bins = 0;                // K
  std::size_t n_fft_bins = 0;
};

// Mel scale, Eq.-style base-10 convention: 2595 * log10(1 + f / 700).
double mel_scale(double f_hz);
double mel_to_hz(double mel);

// Number of CQT bins for a passband. "floor" matches the reported reference
// dimensions (289 for 10-8000 Hz at b = 30); "ceil" is the literal index-range
// reading ceil(b log2(fmax/fmin)), which gives one more bin.
enum class CqtBinRule { floor_rule, ceil_rule };
std::size_t cqt_num_bins(int bins_per_octave, double f_min_hz, double f_max_hz,
                         CqtBinRule rule = CqtBinRule::floor_rule);

// Per-frame real-FFT magnitudes; bins restricted to centers within
// [lo_hz, hi_hz] inclusive. Frames are expected to be windowed already.
Spectrogram stft_amplitude(const dsp::FrameMatrix& frames, double lo_hz,
                           double hi_hz);

// Triangular filters with centers equally spaced on the Mel axis between the
// passband edges, peak weight 1. Filters narrower than the bin spacing can
// end up with no contributing bin and stay all-zero (documented behavior).
MelFilterBank build_mel_filterbank(std::size_t n_mels, int sample_rate_hz,
                                   std::size_t frame_len, double lo_hz,
                                   double hi_hz);

// log(fb * stft_row + eps) per frame.
Spectrogram mel_spectrogram(const Spectrogram& stft, const MelFilterBank& fb,
                            double eps = 1e-10);

CqtKernel build_cqt_kernel(int bins_per_octave, double f_min_hz, double f_max_hz,
                           int sample_rate_hz, std::size_t frame_len,
                           CqtBinRule rule = CqtBinRule::floor_rule);

// Per-frame amplitude spectrum through the kernel matrix, then log(. + eps).
Spectrogram cqt_spectrogram(const dsp::FrameMatrix& frames, const CqtKernel& kernel,
                            double eps = 1e-10);

}  // namespace demonet::features
