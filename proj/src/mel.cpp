#include "prosody/mel.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

namespace prosody {

namespace {

constexpr double kMinLogHz = 1000.0;
constexpr double kLinearHzPerMel = 200.0 / 3.0;
constexpr double kMinLogMel = kMinLogHz / kLinearHzPerMel;
const double kLogStep = std::log(6.4) / 27.0;

}  // namespace

void MelParams::validate() const {
  if (sample_rate <= 0 || n_mels <= 0 || hop_length <= 0 || n_fft <= 0 || win_length <= 0 || win_length > n_fft)
    throw std::invalid_argument("mel params: sizes must be positive and win_length <= n_fft");
  if (f_max > sample_rate / 2) throw std::invalid_argument("mel params: f_max exceeds the Nyquist frequency");
  if (f_min < 0 || f_min >= f_max) throw std::invalid_argument("mel params: need 0 <= f_min < f_max");
}

double hz_to_mel(double hz) {
  return hz < kMinLogHz ? hz / kLinearHzPerMel : kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double mel_to_hz(double mel) {
  return mel < kMinLogMel ? mel * kLinearHzPerMel : kMinLogHz * std::exp((mel - kMinLogMel) * kLogStep);
}

namespace {

std::vector<double> band_edges(const MelParams& p) {
  const double lo = hz_to_mel(p.f_min), hi = hz_to_mel(p.f_max);
  std::vector<double> edges(p.n_mels + 2);
  for (int i = 0; i < p.n_mels + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (p.n_mels + 1));
  return edges;
}

}  // namespace

std::vector<double> mel_band_centers(const MelParams& params) {
  auto edges = band_edges(params);
  return {edges.begin() + 1, edges.end() - 1};
}

MatrixD mel_filterbank(const MelParams& p) {
  p.validate();
  const int bins = p.n_fft / 2 + 1;
  auto edges = band_edges(p);
  MatrixD fb = MatrixD::Zero(p.n_mels, bins);
  for (int m = 0; m < p.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double norm = 2.0 / (right - left);
    for (int k = 0; k < bins; ++k) {
      const double f = k * p.sample_rate / p.n_fft;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(rise, fall)) * norm;
    }
  }
  return fb;
}

MatrixF compute_mel(std::span<const float> waveform, const MelParams& p) {
  p.validate();
  if (waveform.empty()) throw std::invalid_argument("compute_mel: empty waveform");
  const int n = static_cast<int>(waveform.size());
  const int pad = p.n_fft / 2;
  const int frames = n / p.hop_length + 1;
  const int bins = p.n_fft / 2 + 1;

  std::vector<double> padded(static_cast<std::size_t>(n + 2 * pad), 0.0);
  std::copy(waveform.begin(), waveform.end(), padded.begin() + pad);

  // periodic Hann, centered inside the FFT frame
  std::vector<double> window(p.n_fft, 0.0);
  const int woff = (p.n_fft - p.win_length) / 2;
  for (int i = 0; i < p.win_length; ++i)
    window[woff + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / p.win_length);

  const MatrixD fb = mel_filterbank(p);
  Eigen::FFT<double> fft;
  std::vector<double> buf(p.n_fft);
  std::vector<std::complex<double>> spec;
  Eigen::VectorXd mag(bins);
  MatrixF out(frames, p.n_mels);
  for (int t = 0; t < frames; ++t) {
    const int start = t * p.hop_length;
    for (int i = 0; i < p.n_fft; ++i) buf[i] = padded[start + i] * window[i];
    fft.fwd(spec, buf);
    for (int k = 0; k < bins; ++k) mag(k) = std::abs(spec[k]);
    Eigen::VectorXd mel = fb * mag;
    for (int m = 0; m < p.n_mels; ++m) out(t, m) = static_cast<float>(std::log(std::max(mel(m), p.log_floor)));
  }
  return out;
}

}  // namespace prosody
