#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "demonet/common.hpp"

namespace demonet::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 0;
  std::string track_id;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
  void validate() const;
};

// Envelope harmonic term: the signal carries an extra m * relative_depth
// modulation at multiple * mod_hz (blade signature).
struct EnvelopeHarmonic {
  double multiple = 2.0;
  double relative_depth = 0.5;
};

struct SyntheticModulationSpec {
  double amplitude = 1.0;            // A
  double depth = 0.0;                // m, in [0, 1]
  double carrier_hz = 0.0;           // used when band_lo_hz == band_hi_hz == 0
  double band_lo_hz = 0.0;           // broadband carrier band edges
  double band_hi_hz = 0.0;
  double mod_hz = 0.0;               // Omega / 2pi
  std::vector<EnvelopeHarmonic> harmonics;
  double duration_s = 1.0;
  double noise_floor = 0.0;          // std of additive white noise

  bool broadband() const { return band_hi_hz > band_lo_hz; }
  void validate(int sample_rate_hz) const;
};

struct FrameMatrix {
  std::vector<double> data;          // row-major [n_frames x frame_len]
  std::size_t n_frames = 0;
  std::size_t frame_len = 0;
  double frame_len_ms = 0.0;
  double shift_ms = 0.0;
  int sample_rate_hz = 0;

  const double* row(std::size_t i) const { return data.data() + i * frame_len; }
  double* row(std::size_t i) { return data.data() + i * frame_len; }
  // Start time of frame i in seconds.
  double frame_start_s(std::size_t i) const;
};

// x(t) = A (1 + m sin(2 pi mod_hz t) + sum_h m_h sin(2 pi h mod_hz t)) * carrier(t)
// carrier = cos(2 pi carrier_hz t), or unit-RMS band-limited noise for the
// broadband variant. Additive white noise with std = noise_floor on top.
// Deterministic given seed; the deterministic component does not consume
// random state shared with the noise term.
Waveform synthesize_modulated_noise(const SyntheticModulationSpec& spec,
                                    int sample_rate_hz, std::uint64_t seed,
                                    const std::string& track_id = "synthetic");

// Zero-phase band-pass: 5th-order Butterworth applied forward-backward.
// lo_hz == 0 degenerates to low-pass only; hi_hz == nyquist to high-pass only.
Waveform bandpass(const Waveform& w, double lo_hz, double hi_hz);

// Mean-variance normalization (population variance). Rejects constant input.
Waveform normalize(const Waveform& w);

// Split into frames. Frame starts are round(i * shift_ms * fs / 1000), which
// reduces to the usual integer-hop formula whenever the shift is a whole
// number of samples.
FrameMatrix frame(const Waveform& w, double frame_len_ms = 50.0,
                  double shift_ms = 25.0);

// Number of frames that `frame` will produce (shared with SegmentIndex math).
std::size_t frame_count(std::size_t n_samples, std::size_t frame_len,
                        double shift_samples);

// Periodic Hann window applied to every row; returns a new matrix.
FrameMatrix hann_window(const FrameMatrix& frames);

std::vector<double> make_hann(std::size_t n);

// --- filter primitives ------------------------------------------------------

// One second-order section: y = (b0 x + b1 x1 + b2 x2 - a1 y1 - a2 y2), a0 = 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double fs);
std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double fs);
// `order` is the prototype order; the band-pass has 2*order poles.
std::vector<Biquad> butterworth_bandpass(int order, double lo_hz, double hi_hz,
                                         double fs);

// Zero-phase IIR filtering: odd-extension padding, steady-state initial
// conditions, forward then backward pass.
std::vector<double> filtfilt(const std::vector<Biquad>& sos,
                             const std::vector<double>& x);

// Hamming-windowed FIR low-pass, even length allowed.
std::vector<double> fir_lowpass_hamming(std::size_t taps, double cutoff_hz,
                                        double fs);

// Applies the FIR forward-backward `passes` times with zero phase, via padded
// FFT multiplication by |H|^(2*passes); exactly linear convolution, output
// length = input length.
std::vector<double> fir_filtfilt(const std::vector<double>& taps,
                                 const std::vector<double>& x, int passes = 1);

// --- WAV I/O (RIFF, 16-bit signed PCM, mono) --------------------------------

Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace demonet::dsp
