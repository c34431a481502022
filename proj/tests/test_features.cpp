#include <cmath>
#include <vector>

#include "demonet/common.hpp"
#include "demonet/features.hpp"
#include "doctest.h"

using namespace demonet;
using namespace demonet::features;

namespace {

dsp::Waveform tone(double freq_hz, int sr, double dur_s) {
  dsp::Waveform w;
  w.sample_rate_hz = sr;
  w.track_id = "tone";
  const auto n = static_cast<std::size_t>(dur_s * sr);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = std::cos(2.0 * kPi * freq_hz * static_cast<double>(i) / sr);
  return w;
}

}  // namespace

TEST_CASE("mel scale: reference points and round-trip") {
  CHECK(mel_scale(0.0) == 0.0);
  CHECK(mel_scale(700.0) == doctest::Approx(2595.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK(mel_scale(700.0) == doctest::Approx(781.17).epsilon(1e-4));
  double prev = -1.0;
  for (double f = 0.0; f <= 16000.0; f += 50.0) {
    const double m = mel_scale(f);
    CHECK(m > prev);
    prev = m;
    CHECK(mel_to_hz(m) == doctest::Approx(f).epsilon(1e-6));
  }
}

TEST_CASE("stft: reference shape for the 32 kHz / 10-8000 Hz configuration") {
  const auto w = tone(1000.0, 32000, 30.0);
  const auto frames = dsp::hann_window(dsp::frame(w, 50.0, 25.0));
  const auto spec = stft_amplitude(frames, 10.0, 8000.0);
  CHECK(spec.n_frames == 1199);
  CHECK(spec.n_bins == 400);
  spec.validate();

  const auto fb = build_mel_filterbank(300, 32000, frames.frame_len, 10.0, 8000.0);
  const auto mel = mel_spectrogram(spec, fb);
  CHECK(mel.n_frames == 1199);
  CHECK(mel.n_bins == 300);
}

TEST_CASE("stft: zero frame gives a zero row; on-bin tone concentrates") {
  dsp::Waveform w;
  w.sample_rate_hz = 8000;
  w.track_id = "z";
  w.samples.assign(1600, 0.0);
  // Second half is an exact-bin sinusoid (bin spacing 20 Hz at 400 samples).
  const double f = 400.0;
  for (std::size_t i = 800; i < 1600; ++i)
    w.samples[i] = std::sin(2.0 * kPi * f * static_cast<double>(i) / 8000.0);
  const auto frames = dsp::hann_window(dsp::frame(w, 50.0, 100.0));
  REQUIRE(frames.n_frames == 2);
  const auto spec = stft_amplitude(frames, 0.0, 4000.0);
  for (std::size_t k = 0; k < spec.n_bins; ++k) CHECK(spec.row(0)[k] == 0.0);

  // >95% of row energy within +-1 bin of the tone.
  double total = 0.0, local = 0.0;
  std::size_t peak = 0;
  for (std::size_t k = 0; k < spec.n_bins; ++k) {
    const double e = spec.row(1)[k] * spec.row(1)[k];
    total += e;
    if (spec.row(1)[k] > spec.row(1)[peak]) peak = k;
  }
  CHECK(spec.bin_freqs_hz[peak] == doctest::Approx(f).epsilon(1e-9));
  for (std::size_t k = peak - 1; k <= peak + 1; ++k)
    local += spec.row(1)[k] * spec.row(1)[k];
  CHECK(local / total > 0.95);
}

TEST_CASE("mel filterbank: coverage and degenerate passband") {
  const auto fb = build_mel_filterbank(40, 8000, 400, 100.0, 3900.0);
  // Every interior bin inside the span is covered by at least one filter.
  const double df = 8000.0 / 400.0;
  std::vector<double> bin_freqs;
  for (std::size_t k = 0; k <= 200; ++k) {
    const double fr = df * static_cast<double>(k);
    if (fr >= 100.0 && fr <= 3900.0) bin_freqs.push_back(fr);
  }
  REQUIRE(bin_freqs.size() == fb.n_fft_bins);
  for (std::size_t k = 0; k < fb.n_fft_bins; ++k) {
    if (bin_freqs[k] <= fb.center_freqs_hz.front() ||
        bin_freqs[k] >= fb.center_freqs_hz.back())
      continue;  // outside the first/last filter peaks
    double cover = 0.0;
    for (std::size_t m = 0; m < fb.n_mels; ++m)
      cover += fb.weights[m * fb.n_fft_bins + k];
    CHECK(cover > 0.0);
  }
  // Non-empty filters peak at 1.
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    double peak = 0.0;
    for (std::size_t k = 0; k < fb.n_fft_bins; ++k)
      peak = std::max(peak, fb.weights[m * fb.n_fft_bins + k]);
    if (peak > 0.0) CHECK(peak == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(build_mel_filterbank(2, 8000, 400, 100.0, 100.0 + 1e-9), Error);
}

TEST_CASE("mel spectrogram: floor case and log-scaling oracle") {
  Spectrogram stft;
  stft.kind = SpectrogramKind::stft_amplitude;
  stft.n_frames = 3;
  stft.n_bins = 100;
  const double df = 8000.0 / 400.0;
  for (std::size_t k = 0; k < 100; ++k)
    stft.bin_freqs_hz.push_back(200.0 + df * static_cast<double>(k));
  stft.frame_times_s = {0.0, 0.025, 0.05};
  stft.values.assign(300, 0.0);
  const auto fb = build_mel_filterbank(12, 8000, 400, 200.0, 200.0 + df * 99.0);
  REQUIRE(fb.n_fft_bins == 100);

  const auto zero_mel = mel_spectrogram(stft, fb, 1e-10);
  for (double v : zero_mel.values) CHECK(v == doctest::Approx(std::log(1e-10)));

  Rng rng(9);
  for (auto& v : stft.values) v = std::abs(rng.normal()) + 0.1;
  auto doubled = stft;
  for (auto& v : doubled.values) v *= 2.0;
  const auto a = mel_spectrogram(stft, fb, 0.0);
  const auto b = mel_spectrogram(doubled, fb, 0.0);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    CHECK(b.values[i] - a.values[i] == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  auto bad = stft;
  bad.n_bins = 99;
  bad.values.resize(3 * 99);
  bad.bin_freqs_hz.resize(99);
  CHECK_THROWS_AS(mel_spectrogram(bad, fb), Error);
}

TEST_CASE("cqt kernel: geometry, Q, and bin-count rules") {
  const auto k = build_cqt_kernel(30, 10.0, 8000.0, 32000, 1600);
  CHECK(k.center_freqs_hz[0] == doctest::Approx(10.0));
  CHECK(k.center_freqs_hz[30] == doctest::Approx(20.0).epsilon(1e-12));  // one octave
  CHECK(k.q == doctest::Approx(42.78).epsilon(1e-3));
  CHECK(k.n_bins == 289);  // reported reference dimension
  CHECK(cqt_num_bins(30, 10.0, 8000.0, CqtBinRule::ceil_rule) == 290);
  CHECK(cqt_num_bins(30, 10.0, 2000.0) == 229);
  // Constant-Q: f_k / BW_k identical for all k (up to division round-trip).
  for (std::size_t i = 0; i < k.n_bins; ++i)
    CHECK(k.center_freqs_hz[i] / k.bandwidths_hz[i] ==
          doctest::Approx(k.q).epsilon(1e-14));
  CHECK_THROWS_AS(build_cqt_kernel(30, 10.0, 17000.0, 32000, 1600), Error);
}

TEST_CASE("cqt: reference frame count at the 33.35 ms hop") {
  for (int sr : {32000, 17067, 52734}) {
    dsp::Waveform w;
    w.sample_rate_hz = sr;
    w.track_id = "c";
    w.samples.assign(static_cast<std::size_t>(30.0 * sr), 0.25);
    CHECK(dsp::frame(w, 50.0, 33.35).n_frames == 899);
  }
}

TEST_CASE("extractors are shift-covariant at frame granularity") {
  Rng rng(31);
  dsp::Waveform w;
  w.sample_rate_hz = 8000;
  w.track_id = "s";
  w.samples.resize(8000);
  for (auto& v : w.samples) v = rng.normal();
  dsp::Waveform shifted = w;
  shifted.samples.erase(shifted.samples.begin(), shifted.samples.begin() + 200);

  const auto fa = dsp::hann_window(dsp::frame(w, 50.0, 25.0));
  const auto fb = dsp::hann_window(dsp::frame(shifted, 50.0, 25.0));
  const auto sa = stft_amplitude(fa, 0.0, 4000.0);
  const auto sb = stft_amplitude(fb, 0.0, 4000.0);
  for (std::size_t i = 0; i + 1 < sb.n_frames; ++i) {
    for (std::size_t k = 0; k < sa.n_bins; ++k) {
      CHECK(std::abs(sa.row(i + 1)[k] - sb.row(i)[k]) < 1e-9);
    }
  }
}
