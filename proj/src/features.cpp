#include "demonet/features.hpp"

#include <algorithm>
#include <cmath>

#include "demonet/fft.hpp"

namespace demonet::features {

void Spectrogram::validate() const {
  require(values.size() == n_frames * n_bins, "Spectrogram: size mismatch");
  require(bin_freqs_hz.size() == n_bins, "Spectrogram: bin_freqs size mismatch");
  require(frame_times_s.size() == n_frames, "Spectrogram: frame_times size mismatch");
  for (std::size_t i = 1; i < bin_freqs_hz.size(); ++i) {
    require(bin_freqs_hz[i] > bin_freqs_hz[i - 1],
            "Spectrogram: bin frequencies must be strictly increasing");
  }
}

double mel_scale(double f_hz) { return 2595.0 * std::log10(1.0 + f_hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

Spectrogram stft_amplitude(const dsp::FrameMatrix& frames, double lo_hz,
                           double hi_hz) {
  require(frames.n_frames > 0 && frames.frame_len > 0, "stft: empty frames");
  require(lo_hz >= 0.0 && hi_hz > lo_hz, "stft: invalid passband");
  const double fs = frames.sample_rate_hz;
  const std::size_t n = frames.frame_len;
  const double df = fs / static_cast<double>(n);
  // Keep bins whose center frequency lies within [lo, hi] inclusive.
  std::vector<std::size_t> kept;
  std::vector<double> freqs;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double f = df * static_cast<double>(k);
    if (f >= lo_hz && f <= hi_hz) {
      kept.push_back(k);
      freqs.push_back(f);
    }
  }
  require(!kept.empty(), "stft: passband keeps no bins");

  Spectrogram out;
  out.kind = SpectrogramKind::stft_amplitude;
  out.n_frames = frames.n_frames;
  out.n_bins = kept.size();
  out.bin_freqs_hz = std::move(freqs);
  out.frame_times_s.resize(frames.n_frames);
  out.values.resize(out.n_frames * out.n_bins);
  std::vector<double> buf(n);
  for (std::size_t i = 0; i < frames.n_frames; ++i) {
    out.frame_times_s[i] = frames.frame_start_s(i);
    std::copy_n(frames.row(i), n, buf.begin());
    const auto bins = fft::rfft(buf);
    double* r = out.row(i);
    for (std::size_t j = 0; j < kept.size(); ++j) r[j] = std::abs(bins[kept[j]]);
  }
  return out;
}

MelFilterBank build_mel_filterbank(std::size_t n_mels, int sample_rate_hz,
                                   std::size_t frame_len, double lo_hz,
                                   double hi_hz) {
  require(n_mels >= 2, "mel filterbank: need at least 2 filters");
  require(sample_rate_hz > 0 && frame_len > 0, "mel filterbank: bad geometry");
  require(lo_hz >= 0.0 && hi_hz > lo_hz && hi_hz <= 0.5 * sample_rate_hz,
          "mel filterbank: invalid passband");
  const double mel_lo = mel_scale(lo_hz), mel_hi = mel_scale(hi_hz);
  // n_mels + 2 edge points, equally spaced on the Mel axis.
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));
  }
  for (std::size_t i = 1; i < edges.size(); ++i) {
    require(edges[i] > edges[i - 1] + 1e-6 * std::max(1.0, edges[i]),
            "mel filterbank: passband too narrow for " + std::to_string(n_mels) +
                " distinct centers");
  }
  // The bank applies to the passband-restricted STFT bin grid.
  const double df = static_cast<double>(sample_rate_hz) / static_cast<double>(frame_len);
  std::vector<double> bin_freqs;
  for (std::size_t k = 0; k <= frame_len / 2; ++k) {
    const double f = df * static_cast<double>(k);
    if (f >= lo_hz && f <= hi_hz) bin_freqs.push_back(f);
  }
  require(!bin_freqs.empty(), "mel filterbank: passband keeps no bins");

  MelFilterBank fb;
  fb.n_mels = n_mels;
  fb.n_fft_bins = bin_freqs.size();
  fb.center_freqs_hz.assign(edges.begin() + 1, edges.end() - 1);
  fb.weights.assign(n_mels * fb.n_fft_bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    double peak = 0.0;
    double* row = fb.weights.data() + m * fb.n_fft_bins;
    for (std::size_t k = 0; k < bin_freqs.size(); ++k) {
      const double f = bin_freqs[k];
      double w = 0.0;
      if (f > f0 && f < f1) {
        w = (f - f0) / (f1 - f0);
      } else if (f >= f1 && f < f2) {
        w = (f2 - f) / (f2 - f1);
      }
      row[k] = w;
      peak = std::max(peak, w);
    }
    // Peak-1 normalization; filters narrower than the bin spacing may have no
    // contributing bin and stay zero (see the header note).
    if (peak > 0.0) {
      for (std::size_t k = 0; k < fb.n_fft_bins; ++k) row[k] /= peak;
    }
  }
  return fb;
}

Spectrogram mel_spectrogram(const Spectrogram& stft, const MelFilterBank& fb,
                            double eps) {
  require(stft.kind == SpectrogramKind::stft_amplitude,
          "mel_spectrogram: input must be an STFT amplitude spectrogram");
  require(stft.n_bins == fb.n_fft_bins,
          "mel_spectrogram: bin mismatch (stft " + std::to_string(stft.n_bins) +
              " vs filterbank " + std::to_string(fb.n_fft_bins) + ")");
  Spectrogram out;
  out.kind = SpectrogramKind::log_mel;
  out.n_frames = stft.n_frames;
  out.n_bins = fb.n_mels;
  out.bin_freqs_hz = fb.center_freqs_hz;
  out.frame_times_s = stft.frame_times_s;
  out.values.resize(out.n_frames * out.n_bins);
  for (std::size_t i = 0; i < stft.n_frames; ++i) {
    const double* s = stft.row(i);
    double* r = out.row(i);
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      const double* w = fb.weights.data() + m * fb.n_fft_bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < fb.n_fft_bins; ++k) acc += w[k] * s[k];
      r[m] = std::log(acc + eps);
    }
  }
  return out;
}

std::size_t cqt_num_bins(int bins_per_octave, double f_min_hz, double f_max_hz,
                         CqtBinRule rule) {
  require(bins_per_octave >= 1 && f_min_hz > 0.0 && f_max_hz > f_min_hz,
          "cqt: invalid geometry");
  const double octaves = std::log2(f_max_hz / f_min_hz);
  const double raw = static_cast<double>(bins_per_octave) * octaves;
  const auto k = static_cast<std::size_t>(
      rule == CqtBinRule::floor_rule ? std::floor(raw) : std::ceil(raw));
  require(k >= 1, "cqt: passband narrower than one bin");
  return k;
}

CqtKernel build_cqt_kernel(int bins_per_octave, double f_min_hz, double f_max_hz,
                           int sample_rate_hz, std::size_t frame_len,
                           CqtBinRule rule) {
  require(sample_rate_hz > 0 && frame_len > 0, "cqt: bad geometry");
  require(f_max_hz <= 0.5 * sample_rate_hz,
          "cqt: f_max " + std::to_string(f_max_hz) + " Hz above Nyquist (" +
              std::to_string(0.5 * sample_rate_hz) + " Hz)");
  CqtKernel k;
  k.bins_per_octave = bins_per_octave;
  k.f_min_hz = f_min_hz;
  k.f_max_hz = f_max_hz;
  k.q = 1.0 / (std::pow(2.0, 1.0 / bins_per_octave) - 1.0);
  k.n_bins = cqt_num_bins(bins_per_octave, f_min_hz, f_max_hz, rule);
  k.n_fft_bins = frame_len / 2 + 1;
  k.center_freqs_hz.resize(k.n_bins);
  k.bandwidths_hz.resize(k.n_bins);
  k.kernel.assign(k.n_bins * k.n_fft_bins, 0.0);
  const double df = static_cast<double>(sample_rate_hz) / static_cast<double>(frame_len);
  std::vector<double> score(k.n_fft_bins);
  for (std::size_t i = 0; i < k.n_bins; ++i) {
    const double fc = std::pow(2.0, static_cast<double>(i) / bins_per_octave) * f_min_hz;
    const double bw = fc / k.q;
    k.center_freqs_hz[i] = fc;
    k.bandwidths_hz[i] = bw;
    // Gaussian band response with FWHM = bandwidth, peak-normalized in
    // log-space so narrow low-frequency filters degrade to nearest-bin
    // selection instead of underflowing to an all-zero row.
    double best = -1e300;
    for (std::size_t j = 0; j < k.n_fft_bins; ++j) {
      const double f = df * static_cast<double>(j);
      const double z = (f - fc) / bw;
      score[j] = -4.0 * std::log(2.0) * z * z;
      best = std::max(best, score[j]);
    }
    double* row = k.kernel.data() + i * k.n_fft_bins;
    for (std::size_t j = 0; j < k.n_fft_bins; ++j) row[j] = std::exp(score[j] - best);
  }
  return k;
}

Spectrogram cqt_spectrogram(const dsp::FrameMatrix& frames, const CqtKernel& kernel,
                            double eps) {
  require(frames.n_frames > 0, "cqt: empty frames");
  require(frames.frame_len / 2 + 1 == kernel.n_fft_bins,
          "cqt: kernel built for a different frame length (" +
              std::to_string(kernel.n_fft_bins) + " bins vs frame " +
              std::to_string(frames.frame_len) + ")");
  Spectrogram out;
  out.kind = SpectrogramKind::log_cqt;
  out.n_frames = frames.n_frames;
  out.n_bins = kernel.n_bins;
  out.bin_freqs_hz = kernel.center_freqs_hz;
  out.frame_times_s.resize(frames.n_frames);
  out.values.resize(out.n_frames * out.n_bins);
  std::vector<double> buf(frames.frame_len);
  std::vector<double> amp(kernel.n_fft_bins);
  for (std::size_t i = 0; i < frames.n_frames; ++i) {
    out.frame_times_s[i] = frames.frame_start_s(i);
    std::copy_n(frames.row(i), frames.frame_len, buf.begin());
    const auto bins = fft::rfft(buf);
    for (std::size_t j = 0; j < kernel.n_fft_bins; ++j) amp[j] = std::abs(bins[j]);
    double* r = out.row(i);
    for (std::size_t q = 0; q < kernel.n_bins; ++q) {
      const double* w = kernel.kernel.data() + q * kernel.n_fft_bins;
      double acc = 0.0;
      for (std::size_t j = 0; j < kernel.n_fft_bins; ++j) acc += w[j] * amp[j];
      r[q] = std::log(acc + eps);
    }
  }
  return out;
}

}  // namespace demonet::features
