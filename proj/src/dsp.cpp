#include "demonet/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "demonet/fft.hpp"

namespace demonet::dsp {

using std::complex;

void Waveform::validate() const {
  require(!samples.empty(), "Waveform: samples must be non-empty");
  require(sample_rate_hz > 0, "Waveform: sample_rate_hz must be positive");
  require(all_finite(samples), "Waveform: samples must be finite");
}

void SyntheticModulationSpec::validate(int sample_rate_hz) const {
  require(sample_rate_hz > 0, "synthesize: sample rate must be positive");
  require(amplitude > 0.0, "synthesize: amplitude must be > 0");
  require(depth >= 0.0 && depth <= 1.0, "synthesize: depth must be in [0, 1]");
  require(mod_hz >= 0.0, "synthesize: mod_hz must be >= 0");
  require(duration_s > 0.0, "synthesize: duration must be > 0");
  require(noise_floor >= 0.0, "synthesize: noise_floor must be >= 0");
  const double nyquist = 0.5 * sample_rate_hz;
  if (broadband()) {
    require(band_lo_hz >= 0.0 && band_hi_hz <= nyquist,
            "synthesize: carrier band must lie below Nyquist (" +
                std::to_string(nyquist) + " Hz)");
  } else {
    require(carrier_hz > 0.0, "synthesize: carrier_hz must be > 0");
    require(carrier_hz < nyquist,
            "synthesize: carrier at " + std::to_string(carrier_hz) +
                " Hz is at/above Nyquist (" + std::to_string(nyquist) + " Hz)");
  }
}

Waveform synthesize_modulated_noise(const SyntheticModulationSpec& spec,
                                    int sample_rate_hz, std::uint64_t seed,
                                    const std::string& track_id) {
  spec.validate(sample_rate_hz);
  const auto n = static_cast<std::size_t>(std::floor(spec.duration_s * sample_rate_hz));
  require(n > 0, "synthesize: zero-length signal");

  std::vector<double> carrier(n);
  if (spec.broadband()) {
    Rng rng = Rng::fork(seed, 0xCA77);
    Waveform noise;
    noise.sample_rate_hz = sample_rate_hz;
    noise.samples.resize(n);
    for (auto& s : noise.samples) s = rng.normal();
    noise.track_id = track_id;
    const Waveform shaped = bandpass(noise, spec.band_lo_hz, spec.band_hi_hz);
    double rms = 0.0;
    for (double s : shaped.samples) rms += s * s;
    rms = std::sqrt(rms / static_cast<double>(n));
    require(rms > 0.0, "synthesize: degenerate broadband carrier");
    for (std::size_t i = 0; i < n; ++i) carrier[i] = shaped.samples[i] / rms;
  } else {
    const double w = 2.0 * kPi * spec.carrier_hz / sample_rate_hz;
    for (std::size_t i = 0; i < n; ++i) carrier[i] = std::cos(w * static_cast<double>(i));
  }

  Waveform out;
  out.sample_rate_hz = sample_rate_hz;
  out.track_id = track_id;
  out.samples.resize(n);
  const double omega = 2.0 * kPi * spec.mod_hz / sample_rate_hz;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i);
    double env = 1.0 + spec.depth * std::sin(omega * t);
    for (const auto& h : spec.harmonics) {
      env += spec.depth * h.relative_depth * std::sin(h.multiple * omega * t);
    }
    out.samples[i] = spec.amplitude * env * carrier[i];
  }
  if (spec.noise_floor > 0.0) {
    Rng rng = Rng::fork(seed, 0xF100);
    for (auto& s : out.samples) s += spec.noise_floor * rng.normal();
  }
  out.validate();
  return out;
}

// --- Butterworth design ------------------------------------------------------

namespace {

// Analog Butterworth prototype poles (left half-plane, unit cutoff).
std::vector<complex<double>> butter_prototype(int order) {
  std::vector<complex<double>> poles;
  poles.reserve(order);
  for (int k = 0; k < order; ++k) {
    const double theta = kPi * (2.0 * k + 1.0) / (2.0 * order) + kPi / 2.0;
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

complex<double> bilinear(complex<double> s, double fs2) {
  return (fs2 + s) / (fs2 - s);
}

// Builds a biquad from one conjugate pole pair (or a real pole with the
// second coefficients zeroed) and up to two zeros.
Biquad section_from(complex<double> pole, bool pole_pair, complex<double> zero,
                    bool zero_pair) {
  Biquad s{};
  if (pole_pair) {
    s.a1 = -2.0 * pole.real();
    s.a2 = std::norm(pole);
  } else {
    s.a1 = -pole.real();
    s.a2 = 0.0;
  }
  if (zero_pair) {
    s.b0 = 1.0;
    s.b1 = -2.0 * zero.real();
    s.b2 = std::norm(zero);
  } else {
    s.b0 = 1.0;
    s.b1 = -zero.real();
    s.b2 = 0.0;
  }
  return s;
}

complex<double> sos_response(const std::vector<Biquad>& sos, double w) {
  const complex<double> z = std::polar(1.0, w);
  const complex<double> z1 = 1.0 / z, z2 = 1.0 / (z * z);
  complex<double> h(1.0, 0.0);
  for (const auto& s : sos) {
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  }
  return h;
}

void normalize_gain(std::vector<Biquad>& sos, double w_ref) {
  const double g = std::abs(sos_response(sos, w_ref));
  require(g > 0.0, "butterworth: degenerate gain");
  sos.front().b0 /= g;
  sos.front().b1 /= g;
  sos.front().b2 /= g;
}

double prewarp(double f_hz, double fs) {
  return 2.0 * fs * std::tan(kPi * f_hz / fs);
}

}  // namespace

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double fs) {
  require(order >= 1, "butterworth: order must be >= 1");
  require(cutoff_hz > 0.0 && cutoff_hz < 0.5 * fs,
          "butterworth: cutoff must be in (0, Nyquist)");
  const double wc = prewarp(cutoff_hz, fs);
  const double fs2 = 2.0 * fs;
  auto protos = butter_prototype(order);
  std::vector<Biquad> sos;
  // Pair up complex-conjugate poles; odd order leaves one real pole.
  for (int k = 0; k < order / 2; ++k) {
    const auto zp = bilinear(wc * protos[k], fs2);
    sos.push_back(section_from(zp, true, complex<double>(-1.0, 0.0), true));
  }
  if (order % 2) {
    const auto zp = bilinear(wc * protos[order / 2], fs2);
    sos.push_back(section_from(zp, false, complex<double>(-1.0, 0.0), false));
  }
  normalize_gain(sos, 0.0);
  return sos;
}

std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double fs) {
  require(order >= 1, "butterworth: order must be >= 1");
  require(cutoff_hz > 0.0 && cutoff_hz < 0.5 * fs,
          "butterworth: cutoff must be in (0, Nyquist)");
  const double wc = prewarp(cutoff_hz, fs);
  const double fs2 = 2.0 * fs;
  auto protos = butter_prototype(order);
  std::vector<Biquad> sos;
  for (int k = 0; k < order / 2; ++k) {
    const auto zp = bilinear(wc / protos[k], fs2);
    sos.push_back(section_from(zp, true, complex<double>(1.0, 0.0), true));
  }
  if (order % 2) {
    const auto zp = bilinear(wc / protos[order / 2], fs2);
    sos.push_back(section_from(zp, false, complex<double>(1.0, 0.0), false));
  }
  normalize_gain(sos, kPi);
  return sos;
}

std::vector<Biquad> butterworth_bandpass(int order, double lo_hz, double hi_hz,
                                         double fs) {
  require(order >= 1, "butterworth: order must be >= 1");
  require(lo_hz > 0.0 && hi_hz > lo_hz && hi_hz < 0.5 * fs,
          "butterworth: band edges must satisfy 0 < lo < hi < Nyquist");
  const double w1 = prewarp(lo_hz, fs), w2 = prewarp(hi_hz, fs);
  const double w0 = std::sqrt(w1 * w2), bw = w2 - w1;
  const double fs2 = 2.0 * fs;
  auto protos = butter_prototype(order);
  // Low-pass to band-pass: each prototype pole p maps to the pair
  // s = bw p / 2 +- sqrt((bw p / 2)^2 - w0^2). The analog zeros (order at the
  // origin, order at infinity) map to z = +1 and z = -1, so every section
  // carries the numerator z^2 - 1.
  std::vector<complex<double>> zpoles;
  for (const auto& p : protos) {
    const complex<double> a = 0.5 * bw * p;
    const complex<double> d = std::sqrt(a * a - w0 * w0);
    zpoles.push_back(bilinear(a + d, fs2));
    zpoles.push_back(bilinear(a - d, fs2));
  }
  std::vector<Biquad> sos;
  std::vector<double> reals;
  for (const auto& zp : zpoles) {
    if (zp.imag() > 1e-12) {
      sos.push_back(Biquad{1.0, 0.0, -1.0, -2.0 * zp.real(), std::norm(zp)});
    } else if (std::abs(zp.imag()) <= 1e-12) {
      reals.push_back(zp.real());
    }
  }
  require(reals.size() % 2 == 0, "butterworth: unpaired real pole");
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    sos.push_back(
        Biquad{1.0, 0.0, -1.0, -(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]});
  }
  require(sos.size() == static_cast<std::size_t>(order),
          "butterworth: section pairing failed");
  const double f_center = std::sqrt(lo_hz * hi_hz);
  normalize_gain(sos, 2.0 * kPi * f_center / fs);
  return sos;
}

// --- zero-phase IIR filtering -------------------------------------------------

namespace {

// Steady-state (step-response) initial state for one DF2T biquad, scaled by
// the first input sample.
std::array<double, 2> biquad_zi(const Biquad& s, double x0) {
  const double den = 1.0 + s.a1 + s.a2;
  const double k = (std::abs(den) > 1e-300) ? (s.b0 + s.b1 + s.b2) / den : 0.0;
  const double s1 = (s.b1 + s.b2 - (s.a1 + s.a2) * k) * x0;
  const double s2 = (s.b2 - s.a2 * k) * x0;
  return {s1, s2};
}

void biquad_run(const Biquad& s, std::vector<double>& x, double x0_for_zi) {
  auto zi = biquad_zi(s, x0_for_zi);
  double s1 = zi[0], s2 = zi[1];
  for (double& v : x) {
    const double y = s.b0 * v + s1;
    s1 = s.b1 * v - s.a1 * y + s2;
    s2 = s.b2 * v - s.a2 * y;
    v = y;
  }
}

}  // namespace

std::vector<double> filtfilt(const std::vector<Biquad>& sos,
                             const std::vector<double>& x) {
  require(!sos.empty(), "filtfilt: empty filter");
  const std::size_t n = x.size();
  require(n >= 2, "filtfilt: signal too short");
  const std::size_t padlen = std::min<std::size_t>(n - 1, 3 * (2 * sos.size() + 1) * 8);
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  // Odd extension about the end points.
  for (std::size_t i = 0; i < padlen; ++i)
    ext.push_back(2.0 * x.front() - x[padlen - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < padlen; ++i)
    ext.push_back(2.0 * x.back() - x[n - 2 - i]);

  for (const auto& s : sos) biquad_run(s, ext, ext.front());
  std::reverse(ext.begin(), ext.end());
  for (const auto& s : sos) biquad_run(s, ext, ext.front());
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(padlen),
          ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

Waveform bandpass(const Waveform& w, double lo_hz, double hi_hz) {
  w.validate();
  const double nyquist = 0.5 * w.sample_rate_hz;
  require(lo_hz >= 0.0 && lo_hz < hi_hz && hi_hz <= nyquist,
          "bandpass: band edges must satisfy 0 <= lo < hi <= Nyquist, got [" +
              std::to_string(lo_hz) + ", " + std::to_string(hi_hz) + "] at fs " +
              std::to_string(w.sample_rate_hz));
  constexpr int kOrder = 5;
  std::vector<Biquad> sos;
  if (lo_hz <= 0.0 && hi_hz >= nyquist) {
    return w;  // all-pass band
  } else if (lo_hz <= 0.0) {
    sos = butterworth_lowpass(kOrder, hi_hz, w.sample_rate_hz);
  } else if (hi_hz >= nyquist) {
    sos = butterworth_highpass(kOrder, lo_hz, w.sample_rate_hz);
  } else {
    sos = butterworth_bandpass(kOrder, lo_hz, hi_hz, w.sample_rate_hz);
  }
  Waveform out = w;
  out.samples = filtfilt(sos, w.samples);
  return out;
}

Waveform normalize(const Waveform& w) {
  w.validate();
  require(w.samples.size() >= 2, "normalize: need at least 2 samples");
  const double n = static_cast<double>(w.samples.size());
  const double mean = std::accumulate(w.samples.begin(), w.samples.end(), 0.0) / n;
  double var = 0.0;
  for (double s : w.samples) var += (s - mean) * (s - mean);
  var /= n;  // population convention
  require(var > 0.0, "normalize: constant signal (zero variance)");
  const double inv = 1.0 / std::sqrt(var);
  Waveform out = w;
  for (auto& s : out.samples) s = (s - mean) * inv;
  return out;
}

double FrameMatrix::frame_start_s(std::size_t i) const {
  const double shift_samples = shift_ms * sample_rate_hz / 1000.0;
  return std::round(static_cast<double>(i) * shift_samples) / sample_rate_hz;
}

std::size_t frame_count(std::size_t n_samples, std::size_t frame_len,
                        double shift_samples) {
  if (n_samples < frame_len) return 0;
  std::size_t count = 1;
  // Frame starts are round(i * shift); scan forward to the last fitting one.
  const double limit = static_cast<double>(n_samples - frame_len);
  std::size_t i = 1;
  while (std::round(static_cast<double>(i) * shift_samples) <= limit) {
    ++count;
    ++i;
  }
  return count;
}

FrameMatrix frame(const Waveform& w, double frame_len_ms, double shift_ms) {
  w.validate();
  require(frame_len_ms > 0.0 && shift_ms > 0.0,
          "frame: frame_len_ms and shift_ms must be positive");
  const double fs = w.sample_rate_hz;
  const auto frame_len =
      static_cast<std::size_t>(std::llround(frame_len_ms * fs / 1000.0));
  const double shift_samples = shift_ms * fs / 1000.0;
  require(frame_len >= 1 && shift_samples >= 1.0, "frame: degenerate sizes");
  require(frame_len <= w.samples.size(),
          "frame: signal shorter than one frame (" +
              std::to_string(w.samples.size()) + " < " +
              std::to_string(frame_len) + " samples)");
  FrameMatrix m;
  m.frame_len = frame_len;
  m.frame_len_ms = frame_len_ms;
  m.shift_ms = shift_ms;
  m.sample_rate_hz = w.sample_rate_hz;
  m.n_frames = frame_count(w.samples.size(), frame_len, shift_samples);
  m.data.resize(m.n_frames * frame_len);
  for (std::size_t i = 0; i < m.n_frames; ++i) {
    const auto start = static_cast<std::size_t>(
        std::round(static_cast<double>(i) * shift_samples));
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(start), frame_len,
                m.row(i));
  }
  return m;
}

std::vector<double> make_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) /
                                 static_cast<double>(n)));
  }
  return w;
}

FrameMatrix hann_window(const FrameMatrix& frames) {
  FrameMatrix out = frames;
  const auto w = make_hann(frames.frame_len);
  for (std::size_t i = 0; i < out.n_frames; ++i) {
    double* r = out.row(i);
    for (std::size_t j = 0; j < out.frame_len; ++j) r[j] *= w[j];
  }
  return out;
}

std::vector<double> fir_lowpass_hamming(std::size_t taps, double cutoff_hz,
                                        double fs) {
  require(taps >= 2, "fir_lowpass: need at least 2 taps");
  require(cutoff_hz > 0.0 && cutoff_hz < 0.5 * fs,
          "fir_lowpass: cutoff must be in (0, Nyquist)");
  std::vector<double> h(taps);
  const double fc = cutoff_hz / fs;  // normalized
  const double mid = 0.5 * static_cast<double>(taps - 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = static_cast<double>(i) - mid;
    const double sinc = (std::abs(t) < 1e-12)
                            ? 2.0 * fc
                            : std::sin(2.0 * kPi * fc * t) / (kPi * t);
    const double ham = 0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                              static_cast<double>(taps - 1));
    h[i] = sinc * ham;
    sum += h[i];
  }
  for (auto& v : h) v /= sum;  // unit DC gain
  return h;
}

std::vector<double> fir_filtfilt(const std::vector<double>& taps,
                                 const std::vector<double>& x, int passes) {
  require(passes >= 1, "fir_filtfilt: passes must be >= 1");
  require(x.size() >= taps.size(),
          "fir_filtfilt: signal shorter than the filter (" +
              std::to_string(x.size()) + " < " + std::to_string(taps.size()) + ")");
  const std::size_t margin = 2 * static_cast<std::size_t>(passes) * (taps.size() - 1);
  const std::size_t m = fft::next_pow2(x.size() + margin);
  std::vector<double> xp(m, 0.0);
  std::copy(x.begin(), x.end(), xp.begin());
  std::vector<double> hp(m, 0.0);
  std::copy(taps.begin(), taps.end(), hp.begin());
  auto spec = fft::rfft(xp);
  const auto hspec = fft::rfft(hp);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    // Forward-backward = |H|^2 (zero phase); `passes` cascades.
    double mag2 = std::norm(hspec[k]);
    double g = 1.0;
    for (int p = 0; p < passes; ++p) g *= mag2;
    spec[k] *= g;
  }
  auto y = fft::irfft(spec, m);
  y.resize(x.size());
  return y;
}

// --- WAV I/O -----------------------------------------------------------------

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>((v >> 8) & 0xFF));
  s.push_back(static_cast<char>((v >> 16) & 0xFF));
  s.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "read_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() >= 44, "read_wav: truncated file " + path);
  require(std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
              std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          "read_wav: not a RIFF/WAVE file: " + path);
  std::size_t pos = 12;
  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = read_u32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + len > bytes.size()) {
      fail("read_wav: corrupt chunk in " + path);
    }
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      require(len >= 16, "read_wav: short fmt chunk in " + path);
      const int fmt = read_u16(body);
      require(fmt == 1, "read_wav: only PCM supported: " + path);
      channels = read_u16(body + 2);
      sample_rate = static_cast<int>(read_u32(body + 4));
      bits = read_u16(body + 14);
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  require(sample_rate > 0 && data != nullptr, "read_wav: missing chunks in " + path);
  require(bits == 16, "read_wav: only 16-bit PCM supported: " + path);
  require(channels == 1,
          "read_wav: " + path + " has " + std::to_string(channels) +
              " channels; mono input required (array beamforming is out of scope)");
  Waveform w;
  w.sample_rate_hz = sample_rate;
  w.track_id = path;
  const std::size_t n = data_len / 2;
  require(n > 0, "read_wav: empty data chunk in " + path);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<std::int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
    w.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  w.validate();
  std::string out;
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVE";
  out += "fmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits
  out += "data";
  put_u32(out, 2 * n);
  for (double s : w.samples) {
    double v = std::round(s * 32768.0);
    v = std::min(32767.0, std::max(-32768.0, v));
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "write_wav: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "write_wav: write failed for " + path);
}

}  // namespace demonet::dsp
