#pragma once

#include <vector>

namespace cacophony {

constexpr int kMelBands = 128;
constexpr int kFftSize = 512;
constexpr int kWindowLength = 400;  // 25 ms at 16 kHz
constexpr int kHopLength = 160;     // 10 ms
constexpr double kLogFloor = 1e-10;

struct MelFrames {
    int n_frames = 0;
    std::vector<double> v;  // n_frames x kMelBands, row-major

    double at(int t, int m) const { return v[static_cast<size_t>(t) * kMelBands + m]; }
};

// Log-mel spectrogram: Hann(400)/hop 160/FFT 512 power spectrum through 128
// HTK-scale triangular filters spanning 0-8000 Hz, then ln(power + 1e-10).
// The tail is zero-padded by window - hop samples so the frame count is
// exactly ceil(len / hop): 1 s -> 100 frames, 10.24 s -> 1024 frames.
MelFrames mel_spectrogram(const std::vector<double>& samples);

// Frame count of a plain (unpadded) STFT: floor((len - window)/hop) + 1.
int stft_frame_count(int64_t padded_len);

// Lower/center/upper corner frequencies (Hz) of each triangular filter.
// Exposed so tests can locate filter centers independently of the filterbank
// weights themselves.
std::vector<double> mel_corner_frequencies();

double hz_to_mel(double hz);
double mel_to_hz(double mel);

}  // namespace cacophony
