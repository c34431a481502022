#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "demonet/common.hpp"
#include "demonet/dsp.hpp"
#include "doctest.h"

using namespace demonet;
using namespace demonet::dsp;

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double rms_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Demodulated envelope using the module primitives (|x| -> 1024-tap Hamming
// low-pass, forward-backward, two passes), trimmed of filter edges.
std::vector<double> envelope_of(const Waveform& w, double cutoff_hz = 100.0) {
  std::vector<double> rect(w.samples.size());
  for (std::size_t i = 0; i < rect.size(); ++i) rect[i] = std::abs(w.samples[i]);
  const auto taps = fir_lowpass_hamming(1024, cutoff_hz, w.sample_rate_hz);
  auto env = fir_filtfilt(taps, rect, 2);
  const std::size_t trim = 2048;
  REQUIRE(env.size() > 2 * trim);
  return {env.begin() + trim, env.end() - trim};
}

Waveform sine_wave(double freq_hz, int sr, double dur_s, double amp = 1.0) {
  Waveform w;
  w.sample_rate_hz = sr;
  w.track_id = "probe";
  const auto n = static_cast<std::size_t>(dur_s * sr);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = amp * std::sin(2.0 * kPi * freq_hz * static_cast<double>(i) / sr);
  return w;
}

}  // namespace

TEST_CASE("synthesize: unmodulated carrier has a flat envelope") {
  SyntheticModulationSpec spec;
  spec.amplitude = 1.0;
  spec.depth = 0.0;
  spec.carrier_hz = 1000.0;
  spec.duration_s = 5.0;
  const auto w = synthesize_modulated_noise(spec, 8000, 1);
  const auto env = envelope_of(w);
  const double m = mean_of(env);
  double var = 0.0;
  for (double e : env) var += (e - m) * (e - m);
  var /= static_cast<double>(env.size());
  CHECK(std::sqrt(var) / m < 0.01);  // coefficient of variation
}

TEST_CASE("synthesize: envelope autocorrelation peaks at the modulation period") {
  SyntheticModulationSpec spec;
  spec.amplitude = 1.0;
  spec.depth = 0.5;
  spec.mod_hz = 10.0;
  spec.carrier_hz = 1000.0;
  spec.duration_s = 5.0;
  const int sr = 8000;
  const auto w = synthesize_modulated_noise(spec, sr, 1);
  const auto env = envelope_of(w);
  // Autocorrelation oracle: scan lags around one modulation period.
  const auto lag_lo = static_cast<std::size_t>(0.05 * sr);
  const auto lag_hi = static_cast<std::size_t>(0.15 * sr);
  std::size_t best = lag_lo;
  double best_val = -1e300;
  const double m = mean_of(env);
  for (std::size_t lag = lag_lo; lag <= lag_hi; ++lag) {
    double acc = 0.0;
    for (std::size_t i = 0; i + lag < env.size(); ++i)
      acc += (env[i] - m) * (env[i + lag] - m);
    acc /= static_cast<double>(env.size() - lag);
    if (acc > best_val) {
      best_val = acc;
      best = lag;
    }
  }
  const auto expected = static_cast<std::size_t>(0.1 * sr);
  CHECK(best >= expected - 1);
  CHECK(best <= expected + 1);
}

TEST_CASE("synthesize: seed only affects the noise term") {
  SyntheticModulationSpec spec;
  spec.amplitude = 1.0;
  spec.depth = 0.3;
  spec.mod_hz = 5.0;
  spec.carrier_hz = 500.0;
  spec.duration_s = 1.0;
  const auto clean_a = synthesize_modulated_noise(spec, 8000, 11);
  const auto clean_b = synthesize_modulated_noise(spec, 8000, 22);
  CHECK(clean_a.samples == clean_b.samples);  // deterministic part, bit-identical

  spec.noise_floor = 0.3;
  const auto noisy = synthesize_modulated_noise(spec, 8000, 33);
  std::vector<double> noise(noisy.samples.size());
  for (std::size_t i = 0; i < noise.size(); ++i)
    noise[i] = noisy.samples[i] - clean_a.samples[i];
  CHECK(rms_of(noise) == doctest::Approx(0.3).epsilon(0.1));
}

TEST_CASE("synthesize: identical spec and seed give bit-identical output") {
  SyntheticModulationSpec spec;
  spec.band_lo_hz = 200.0;
  spec.band_hi_hz = 900.0;
  spec.depth = 0.4;
  spec.mod_hz = 7.0;
  spec.duration_s = 1.0;
  spec.noise_floor = 0.1;
  const auto a = synthesize_modulated_noise(spec, 8000, 99);
  const auto b = synthesize_modulated_noise(spec, 8000, 99);
  CHECK(a.samples == b.samples);
}

TEST_CASE("synthesize: carrier at or above Nyquist is rejected") {
  SyntheticModulationSpec spec;
  spec.carrier_hz = 4000.0;
  spec.duration_s = 1.0;
  CHECK_THROWS_AS(synthesize_modulated_noise(spec, 8000, 1), Error);
}

TEST_CASE("bandpass: in-band sinusoid preserved, zero phase") {
  const double lo = 400.0, hi = 1200.0;
  const auto probe = sine_wave(0.5 * (lo + hi), 8000, 4.0);
  const auto out = bandpass(probe, lo, hi);
  REQUIRE(out.samples.size() == probe.samples.size());
  // Amplitude within +-1 dB (interior, away from edge transients).
  std::vector<double> in_mid(probe.samples.begin() + 500, probe.samples.end() - 500);
  std::vector<double> out_mid(out.samples.begin() + 500, out.samples.end() - 500);
  const double db = 20.0 * std::log10(rms_of(out_mid) / rms_of(in_mid));
  CHECK(std::abs(db) < 1.0);
  // Cross-correlation peak at lag 0; the probe repeats every 10 samples, so
  // search within half a period to keep the peak unique.
  int best_lag = -100;
  double best = -1e300;
  for (int lag = -4; lag <= 4; ++lag) {
    double acc = 0.0;
    for (std::size_t i = 500; i + 600 < probe.samples.size(); ++i) {
      const auto j = static_cast<std::size_t>(static_cast<long>(i) + lag);
      acc += probe.samples[i] * out.samples[j];
    }
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  CHECK(best_lag == 0);
}

TEST_CASE("bandpass: two octaves below the band is strongly attenuated") {
  const double lo = 400.0, hi = 1200.0;
  const auto probe = sine_wave(lo / 4.0, 8000, 4.0);
  const auto out = bandpass(probe, lo, hi);
  CHECK(rms_of(out.samples) <= 0.01 * rms_of(probe.samples));
}

TEST_CASE("bandpass: lo = 0 degenerates to a low-pass that keeps DC") {
  Waveform w;
  w.sample_rate_hz = 8000;
  w.track_id = "dc";
  w.samples.assign(8000, 1.0);
  const auto out = bandpass(w, 0.0, 1000.0);
  CHECK(mean_of(out.samples) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("bandpass: linearity") {
  Rng rng(5);
  Waveform x, y;
  x.sample_rate_hz = y.sample_rate_hz = 8000;
  x.track_id = y.track_id = "lin";
  x.samples.resize(4096);
  y.samples.resize(4096);
  for (auto& v : x.samples) v = rng.normal();
  for (auto& v : y.samples) v = rng.normal();
  const double a = 0.37, b = -1.25;
  Waveform mix = x;
  for (std::size_t i = 0; i < mix.samples.size(); ++i)
    mix.samples[i] = a * x.samples[i] + b * y.samples[i];
  const auto fm = bandpass(mix, 300.0, 900.0);
  const auto fx = bandpass(x, 300.0, 900.0);
  const auto fy = bandpass(y, 300.0, 900.0);
  double scale = 0.0;
  for (double v : fm.samples) scale = std::max(scale, std::abs(v));
  double err = 0.0;
  for (std::size_t i = 0; i < fm.samples.size(); ++i)
    err = std::max(err, std::abs(fm.samples[i] - (a * fx.samples[i] + b * fy.samples[i])));
  CHECK(err / scale < 1e-9);
}

TEST_CASE("bandpass: invalid edges rejected") {
  const auto probe = sine_wave(100.0, 8000, 0.5);
  CHECK_THROWS_AS(bandpass(probe, 500.0, 400.0), Error);
  CHECK_THROWS_AS(bandpass(probe, 100.0, 4500.0), Error);
  CHECK_THROWS_AS(bandpass(probe, -1.0, 400.0), Error);
}

TEST_CASE("normalize: hand-computed case and idempotence") {
  Waveform w;
  w.sample_rate_hz = 100;
  w.track_id = "n";
  w.samples = {1.0, 2.0, 3.0};
  const auto out = normalize(w);
  CHECK(mean_of(out.samples) == doctest::Approx(0.0).epsilon(1e-9));
  double var = 0.0;
  for (double s : out.samples) var += s * s;
  var /= 3.0;
  CHECK(var == doctest::Approx(1.0).epsilon(1e-6));  // population convention
  // sqrt(2/3) spacing
  CHECK(out.samples[2] == doctest::Approx(std::sqrt(1.5)).epsilon(1e-9));

  const auto again = normalize(out);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(again.samples[i] - out.samples[i]) < 1e-9);
}

TEST_CASE("normalize: constant signal rejected") {
  Waveform w;
  w.sample_rate_hz = 100;
  w.track_id = "z";
  w.samples.assign(16, 0.0);
  CHECK_THROWS_AS(normalize(w), Error);
}

TEST_CASE("frame: paper frame counts for 30 s segments") {
  SyntheticModulationSpec spec;
  spec.carrier_hz = 1000.0;
  spec.duration_s = 30.0;

  const auto w32 = synthesize_modulated_noise(spec, 32000, 1);
  CHECK(frame(w32, 50.0, 25.0).n_frames == 1199);

  const auto w17 = synthesize_modulated_noise(spec, 17067, 1);
  CHECK(frame(w17, 50.0, 25.0).n_frames == 1199);
}

TEST_CASE("frame: boundary and error cases") {
  Waveform w;
  w.sample_rate_hz = 1000;
  w.track_id = "f";
  w.samples.assign(50, 1.0);  // exactly one 50 ms frame at 1 kHz
  CHECK(frame(w, 50.0, 25.0).n_frames == 1);
  w.samples.assign(49, 1.0);
  CHECK_THROWS_AS(frame(w, 50.0, 25.0), Error);
}

TEST_CASE("frame: count formula exact for integral shifts (property)") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t frame_len = 1 + rng.below(400);
    const std::size_t shift = 1 + rng.below(frame_len);  // shift <= frame
    const std::size_t n = frame_len + rng.below(20000);
    Waveform w;
    w.sample_rate_hz = 1000;  // 1 ms per sample: ms == samples
    w.track_id = "p";
    w.samples.assign(n, 0.5);
    const auto m = frame(w, static_cast<double>(frame_len), static_cast<double>(shift));
    const std::size_t expected = (n - frame_len) / shift + 1;
    CHECK(m.n_frames == expected);
    CHECK(m.frame_len == frame_len);
  }
}

TEST_CASE("hann window: definition probes") {
  Waveform w;
  w.sample_rate_hz = 1000;
  w.track_id = "h";
  w.samples.assign(64, 1.0);
  const auto frames = frame(w, 64.0, 64.0);
  REQUIRE(frames.n_frames == 1);
  const auto windowed = hann_window(frames);
  const auto win = make_hann(64);
  for (std::size_t j = 0; j < 64; ++j)
    CHECK(windowed.row(0)[j] == doctest::Approx(win[j]).epsilon(1e-12));
  CHECK(win[0] == 0.0);                       // periodic convention
  CHECK(win[32] == doctest::Approx(1.0));     // midpoint of even N
}

TEST_CASE("fir_filtfilt matches a direct zero-phase convolution oracle") {
  Rng rng(23);
  const std::size_t taps_n = 8, n = 64;
  std::vector<double> h(taps_n), x(n);
  for (auto& v : h) v = rng.normal();
  for (auto& v : x) v = rng.normal();
  // Net kernel of one forward-backward pass is the autocorrelation of h.
  const int t = static_cast<int>(taps_n);
  std::vector<double> g(2 * taps_n - 1, 0.0);  // lags -(t-1) .. t-1
  for (int m = -(t - 1); m <= t - 1; ++m) {
    double acc = 0.0;
    for (int k = 0; k < t; ++k) {
      const int km = k + m;
      if (km >= 0 && km < t) acc += h[k] * h[km];
    }
    g[static_cast<std::size_t>(m + t - 1)] = acc;
  }
  std::vector<double> expect(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int m = -(t - 1); m <= t - 1; ++m) {
      const auto j = static_cast<long>(i) - m;
      if (j >= 0 && j < static_cast<long>(n))
        expect[i] += g[static_cast<std::size_t>(m + t - 1)] * x[static_cast<std::size_t>(j)];
    }
  }
  const auto got = fir_filtfilt(h, x, 1);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-10));
}

TEST_CASE("wav round-trip at 16-bit precision") {
  SyntheticModulationSpec spec;
  spec.carrier_hz = 440.0;
  spec.amplitude = 0.5;
  spec.duration_s = 0.25;
  const auto w = synthesize_modulated_noise(spec, 8000, 4);
  const std::string path = "test_roundtrip.wav";
  write_wav(path, w);
  const auto back = read_wav(path);
  REQUIRE(back.samples.size() == w.samples.size());
  CHECK(back.sample_rate_hz == 8000);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - w.samples[i]) <= 0.5 / 32768.0 + 1e-12);
  std::remove(path.c_str());
}
