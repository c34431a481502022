#include "demonet/demon.hpp"

#include <algorithm>
#include <cmath>

#include "demonet/fft.hpp"

namespace demonet::demon {

void DemonSpectrum2D::validate() const {
  require(values.size() == n_subbands * n_mod_bins, "DemonSpectrum2D: size mismatch");
  require(subband_edges_hz.size() == n_subbands + 1,
          "DemonSpectrum2D: edge count mismatch");
  for (double v : values) {
    require(std::isfinite(v) && v >= 0.0,
            "DemonSpectrum2D: values must be finite and non-negative");
  }
}

std::size_t subband_count(double lo_hz, double hi_hz, double interval_hz) {
  require(interval_hz > 0.0 && hi_hz > lo_hz && lo_hz >= 0.0,
          "subband_split: invalid passband");
  require(hi_hz - lo_hz >= interval_hz,
          "subband_split: passband narrower than one interval");
  return static_cast<std::size_t>(std::floor((hi_hz - lo_hz) / interval_hz));
}

std::vector<dsp::Waveform> subband_split(const dsp::Waveform& w, double interval_hz,
                                         double lo_hz, double hi_hz) {
  w.validate();
  const std::size_t count = subband_count(lo_hz, hi_hz, interval_hz);
  std::vector<dsp::Waveform> bands;
  bands.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double b0 = lo_hz + interval_hz * static_cast<double>(i);
    const double b1 = b0 + interval_hz;
    bands.push_back(dsp::bandpass(w, b0, b1));
  }
  return bands;
}

dsp::Waveform envelope_demodulate(const dsp::Waveform& sub,
                                  double lowpass_cutoff_hz) {
  sub.validate();
  constexpr std::size_t kTaps = 1024;
  require(sub.samples.size() >= kTaps,
          "envelope_demodulate: signal shorter than the " + std::to_string(kTaps) +
              "-tap filter");
  std::vector<double> rect(sub.samples.size());
  for (std::size_t i = 0; i < rect.size(); ++i) rect[i] = std::abs(sub.samples[i]);
  const auto taps =
      dsp::fir_lowpass_hamming(kTaps, lowpass_cutoff_hz, sub.sample_rate_hz);
  dsp::Waveform out = sub;
  out.samples = dsp::fir_filtfilt(taps, rect, 2);
  return out;
}

std::vector<double> modulation_spectrum(const dsp::Waveform& envelope,
                                        double mod_f_max_hz, std::size_t n_mod_bins,
                                        double* mod_bin_hz) {
  envelope.validate();
  require(mod_f_max_hz > 0.0, "modulation_spectrum: mod_f_max must be positive");
  const double fs = envelope.sample_rate_hz;
  const auto decim = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fs / (2.5 * mod_f_max_hz))));
  const double mod_fs = fs / static_cast<double>(decim);
  std::vector<double> env2;
  env2.reserve(envelope.samples.size() / decim + 1);
  for (std::size_t i = 0; i < envelope.samples.size(); i += decim) {
    env2.push_back(envelope.samples[i] * envelope.samples[i]);
  }
  const std::size_t n = env2.size();
  require(n >= 2, "modulation_spectrum: envelope too short after decimation");
  const auto bins = fft::rfft(env2);
  const double df = mod_fs / static_cast<double>(n);
  if (mod_bin_hz) *mod_bin_hz = df;
  std::size_t keep;
  if (n_mod_bins > 0) {
    require(n_mod_bins <= bins.size(),
            "modulation_spectrum: n_mod_bins = " + std::to_string(n_mod_bins) +
                " exceeds the " + std::to_string(bins.size()) +
                " available bins; use a longer signal or fewer bins");
    keep = n_mod_bins;
  } else {
    keep = std::min<std::size_t>(
        bins.size(), static_cast<std::size_t>(std::floor(mod_f_max_hz / df)) + 1);
  }
  std::vector<double> out(keep);
  for (std::size_t k = 0; k < keep; ++k) out[k] = std::abs(bins[k]);
  return out;
}

DemonSpectrum2D demon2d(const dsp::Waveform& w, const DemonConfig& cfg) {
  w.validate();
  std::size_t count = subband_count(cfg.passband_lo_hz, cfg.passband_hi_hz,
                                    cfg.interval_hz);
  if (cfg.n_subbands_cap > 0) count = std::min(count, cfg.n_subbands_cap);

  DemonSpectrum2D out;
  out.n_subbands = count;
  out.subband_edges_hz.resize(count + 1);
  for (std::size_t i = 0; i <= count; ++i) {
    out.subband_edges_hz[i] = cfg.passband_lo_hz + cfg.interval_hz * static_cast<double>(i);
  }
  // Bands are independent; compute them in parallel, merge in band order.
  std::vector<std::vector<double>> rows(count);
  std::vector<double> row_df(count, 0.0);
  parallel_for(count, [&](std::size_t i) {
    const double b0 = out.subband_edges_hz[i];
    const double b1 = out.subband_edges_hz[i + 1];
    const auto band = dsp::bandpass(w, b0, b1);
    const auto env = envelope_demodulate(band, cfg.lowpass_cutoff_hz);
    rows[i] = modulation_spectrum(env, cfg.mod_f_max_hz, cfg.n_mod_bins, &row_df[i]);
  });
  out.n_mod_bins = rows.front().size();
  out.mod_bin_hz = row_df.front();
  out.values.resize(count * out.n_mod_bins);
  for (std::size_t i = 0; i < count; ++i) {
    require(rows[i].size() == out.n_mod_bins, "demon2d: inconsistent band widths");
    std::copy(rows[i].begin(), rows[i].end(), out.row(i));
  }
  out.validate();
  return out;
}

DemonSpectrum1D demon1d(const DemonSpectrum2D& d) {
  DemonSpectrum1D out;
  out.mod_bin_hz = d.mod_bin_hz;
  out.values.assign(d.n_mod_bins, 0.0);
  for (std::size_t i = 0; i < d.n_subbands; ++i) {
    const double* r = d.row(i);
    for (std::size_t k = 0; k < d.n_mod_bins; ++k) out.values[k] += r[k];
  }
  return out;
}

double find_fundamental(const DemonSpectrum1D& d, double f_lo_hz, double f_hi_hz,
                        int n_harmonics) {
  require(d.mod_bin_hz > 0.0, "find_fundamental: missing bin resolution");
  require(n_harmonics >= 1, "find_fundamental: need at least one harmonic");
  const double df = d.mod_bin_hz;
  const auto lo = static_cast<std::size_t>(std::ceil(f_lo_hz / df));
  require(lo >= 1, "find_fundamental: f_lo must be at least one bin above DC");
  require(d.values.size() >= 2, "find_fundamental: spectrum too short");
  const auto hi = std::min(d.values.size() - 1,
                           static_cast<std::size_t>(std::floor(f_hi_hz / df)));
  require(lo <= hi, "find_fundamental: empty search range");

  std::size_t best = lo;
  double best_score = -1.0;
  for (std::size_t c = lo; c <= hi; ++c) {
    double score = 0.0;
    for (int h = 1; h <= n_harmonics; ++h) {
      const std::size_t k = c * static_cast<std::size_t>(h);
      if (k >= d.values.size()) break;
      // +-1 bin of slack absorbs off-grid harmonics.
      double v = d.values[k];
      if (k + 1 < d.values.size()) v = std::max(v, d.values[k + 1]);
      if (k >= 2) v = std::max(v, d.values[k - 1]);  // k-1 >= 1, never DC
      score += v;
    }
    if (score > best_score) {  // strict: ties keep the lowest bin
      best_score = score;
      best = c;
    }
  }
  return static_cast<double>(best) * df;
}

}  // namespace demonet::demon
