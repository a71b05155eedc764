#pragma once

#include "prosody/linalg.hpp"

#include <span>
#include <vector>

namespace prosody {

/// Log-mel front end. Defaults are 22.05 kHz, 80 bands, 8 kHz upper edge
/// and a 256-sample hop.
struct MelParams {
  double sample_rate = 22050.0;
  int n_mels = 80;
  double f_min = 0.0;
  double f_max = 8000.0;
  int hop_length = 256;
  int n_fft = 1024;
  int win_length = 1024;
  /// Magnitudes below this are clamped before the log.
  double log_floor = 1e-5;

  void validate() const;
};

/// Slaney-style mel scale (linear below 1 kHz, logarithmic above).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filterbank [n_mels x (n_fft/2 + 1)] with Slaney area normalization.
MatrixD mel_filterbank(const MelParams& params);

/// Center frequency in Hz of every mel band.
std::vector<double> mel_band_centers(const MelParams& params);

/// Magnitude STFT (Hann window, centered frames with n_fft/2 zeros of
/// padding on both sides) -> mel filterbank -> natural log. Returns
/// [floor(len / hop) + 1, n_mels].
MatrixF compute_mel(std::span<const float> waveform, const MelParams& params);

}  // namespace prosody
