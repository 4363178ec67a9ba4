#include "cacophony/mel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace cacophony {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Iterative radix-2 FFT, in-place over interleaved re/im pairs. n = 512 here.
void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t k = 0; k < len / 2; ++k) {
                const double ur = re[i + k], ui = im[i + k];
                const double vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
                const double vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

struct Filterbank {
    // weights[m] = list of (fft_bin, weight)
    std::vector<std::vector<std::pair<int, double>>> weights;
};

const Filterbank& filterbank() {
    static const Filterbank fb = [] {
        Filterbank out;
        out.weights.resize(kMelBands);
        const auto corners = mel_corner_frequencies();
        const double bin_hz = static_cast<double>(16000) / kFftSize;
        const int n_bins = kFftSize / 2 + 1;
        for (int m = 0; m < kMelBands; ++m) {
            const double lo = corners[static_cast<size_t>(m)];
            const double center = corners[static_cast<size_t>(m) + 1];
            const double hi = corners[static_cast<size_t>(m) + 2];
            for (int k = 0; k < n_bins; ++k) {
                const double f = k * bin_hz;
                double w = 0.0;
                if (f > lo && f < center)
                    w = (f - lo) / (center - lo);
                else if (f >= center && f < hi)
                    w = (hi - f) / (hi - center);
                if (w > 0.0) out.weights[static_cast<size_t>(m)].emplace_back(k, w);
            }
        }
        return out;
    }();
    return fb;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_corner_frequencies() {
    std::vector<double> corners(kMelBands + 2);
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(8000.0);
    for (int i = 0; i < kMelBands + 2; ++i)
        corners[static_cast<size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kMelBands + 1));
    return corners;
}

int stft_frame_count(int64_t padded_len) {
    if (padded_len < kWindowLength) return 0;
    return static_cast<int>((padded_len - kWindowLength) / kHopLength) + 1;
}

MelFrames mel_spectrogram(const std::vector<double>& samples) {
    if (samples.empty()) throw std::invalid_argument("mel_spectrogram: empty input");

    // Tail padding by window - hop makes every hop produce a frame, so the
    // frame rate is exactly 100 frames per second of input.
    std::vector<double> padded = samples;
    padded.resize(samples.size() + (kWindowLength - kHopLength), 0.0);
    const int n_frames = stft_frame_count(static_cast<int64_t>(padded.size()));
    if (n_frames <= 0) throw std::invalid_argument("mel_spectrogram: input shorter than one window");

    // Periodic Hann window.
    std::vector<double> window(kWindowLength);
    for (int i = 0; i < kWindowLength; ++i)
        window[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / kWindowLength));

    MelFrames out;
    out.n_frames = n_frames;
    out.v.assign(static_cast<size_t>(n_frames) * kMelBands, 0.0);

    std::vector<double> re(kFftSize), im(kFftSize), power(kFftSize / 2 + 1);
    const auto& fb = filterbank();
    for (int t = 0; t < n_frames; ++t) {
        const size_t start = static_cast<size_t>(t) * kHopLength;
        for (int i = 0; i < kWindowLength; ++i)
            re[static_cast<size_t>(i)] = padded[start + static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
        std::fill(re.begin() + kWindowLength, re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        fft_radix2(re, im);
        for (int k = 0; k <= kFftSize / 2; ++k)
            power[static_cast<size_t>(k)] =
                re[static_cast<size_t>(k)] * re[static_cast<size_t>(k)] + im[static_cast<size_t>(k)] * im[static_cast<size_t>(k)];
        for (int m = 0; m < kMelBands; ++m) {
            double acc = 0.0;
            for (const auto& [k, w] : fb.weights[static_cast<size_t>(m)]) acc += w * power[static_cast<size_t>(k)];
            out.v[static_cast<size_t>(t) * kMelBands + m] = std::log(acc + kLogFloor);
        }
    }
    return out;
}

}  // namespace cacophony
