#pragma once

#include <vector>

#include "demonet/dsp.hpp"

namespace demonet::demon {

struct DemonConfig {
  double passband_lo_hz = 10.0;
  double passband_hi_hz = 8000.0;
  double interval_hz = 250.0;       // sub-band width
  double lowpass_cutoff_hz = 100.0; // envelope low-pass
  double mod_f_max_hz = 100.0;      // modulation band of interest
  std::size_t n_mod_bins = 1172;    // kept bins; 0 = all bins up to mod_f_max
  std::size_t n_subbands_cap = 0;   // 0 = no cap
};

struct DemonSpectrum2D {
  std::vector<double> values;       // row-major [n_subbands x n_mod_bins]
  std::size_t n_subbands = 0;
  std::size_t n_mod_bins = 0;
  std::vector<double> subband_edges_hz;  // n_subbands + 1 edges
  double mod_bin_hz = 0.0;

  const double* row(std::size_t i) const { return values.data() + i * n_mod_bins; }
  double* row(std::size_t i) { return values.data() + i * n_mod_bins; }
  void validate() const;
};

struct DemonSpectrum1D {
  std::vector<double> values;       // [n_mod_bins]
  double mod_bin_hz = 0.0;
};

// Consecutive interval-wide band-pass copies starting at the passband's lower
// edge; count = floor((hi - lo) / interval).
std::vector<dsp::Waveform> subband_split(const dsp::Waveform& w, double interval_hz,
                                         double lo_hz, double hi_hz);

std::size_t subband_count(double lo_hz, double hi_hz, double interval_hz);

// |x| -> length-1024 Hamming FIR low-pass, forward-backward, two passes.
dsp::Waveform envelope_demodulate(const dsp::Waveform& sub,
                                  double lowpass_cutoff_hz = 100.0);

// Magnitude spectrum of envelope^2 after decimation to ~2.5 * mod_f_max.
// Returns the kept bins and sets mod_bin_hz to the bin spacing.
std::vector<double> modulation_spectrum(const dsp::Waveform& envelope,
                                        double mod_f_max_hz, std::size_t n_mod_bins,
                                        double* mod_bin_hz);

DemonSpectrum2D demon2d(const dsp::Waveform& w, const DemonConfig& cfg);

DemonSpectrum1D demon1d(const DemonSpectrum2D& d);

// Harmonic-sum fundamental estimate over [f_lo, f_hi]; DC is ignored and ties
// break toward the lowest bin. Used by tests and reports only.
double find_fundamental(const DemonSpectrum1D& d, double f_lo_hz, double f_hi_hz,
                        int n_harmonics = 3);

}  // namespace demonet::demon
