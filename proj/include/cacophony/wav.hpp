#pragma once

#include <string>
#include <vector>

namespace cacophony {

constexpr int kSampleRate = 16000;

// Reads a RIFF WAV (PCM16 or IEEE float32). Multi-channel input is averaged
// to mono; a sample rate other than 16 kHz is rejected outright rather than
// silently resampled. Samples come back in [-1, 1].
std::vector<double> load_wav(const std::string& path);

// Writes mono PCM16 at 16 kHz. Values outside [-1, 1] are clipped.
void write_wav(const std::string& path, const std::vector<double>& samples);

}  // namespace cacophony
