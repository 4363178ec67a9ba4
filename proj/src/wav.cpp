#include "cacophony/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cacophony {

namespace {

uint32_t rd_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t rd_u16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

void wr_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

void wr_u16(std::ofstream& f, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

std::vector<double> load_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("load_wav: not a RIFF/WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    size_t data_off = 0, data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t len = rd_u32(bytes.data() + pos + 4);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16 || pos + 8 + 16 > bytes.size()) throw std::runtime_error("load_wav: bad fmt chunk");
            const unsigned char* p = bytes.data() + pos + 8;
            format = rd_u16(p);
            channels = rd_u16(p + 2);
            rate = rd_u32(p + 4);
            bits = rd_u16(p + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_off = pos + 8;
            data_len = len;
        }
        pos += 8 + len + (len & 1);  // chunks are word-aligned
    }
    if (data_off == 0) throw std::runtime_error("load_wav: no data chunk");
    if (channels == 0) throw std::runtime_error("load_wav: no fmt chunk");
    if (rate != kSampleRate)
        throw std::runtime_error("load_wav: sample rate " + std::to_string(rate) + " Hz, expected 16000 Hz (" + path +
                                 "); resampling is not supported");
    if (data_off + data_len > bytes.size()) throw std::runtime_error("load_wav: truncated data chunk");

    std::vector<double> mono;
    if (format == 1 && bits == 16) {
        const size_t frames = data_len / (2 * channels);
        mono.resize(frames);
        for (size_t i = 0; i < frames; ++i) {
            double acc = 0.0;
            for (int c = 0; c < channels; ++c) {
                const unsigned char* p = bytes.data() + data_off + (i * channels + c) * 2;
                const int16_t s = static_cast<int16_t>(p[0] | (p[1] << 8));
                acc += static_cast<double>(s) / 32768.0;
            }
            mono[i] = acc / channels;
        }
    } else if (format == 3 && bits == 32) {
        const size_t frames = data_len / (4 * channels);
        mono.resize(frames);
        for (size_t i = 0; i < frames; ++i) {
            double acc = 0.0;
            for (int c = 0; c < channels; ++c) {
                const unsigned char* p = bytes.data() + data_off + (i * channels + c) * 4;
                const uint32_t bitsv = rd_u32(p);
                float fv;
                std::memcpy(&fv, &bitsv, sizeof(fv));
                acc += static_cast<double>(fv);
            }
            mono[i] = acc / channels;
        }
    } else {
        throw std::runtime_error("load_wav: unsupported format (want PCM16 or IEEE float32): " + path);
    }
    return mono;
}

void write_wav(const std::string& path, const std::vector<double>& samples) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_wav: cannot open " + path);
    const uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
    f.write("RIFF", 4);
    wr_u32(f, 36 + data_len);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    wr_u32(f, 16);
    wr_u16(f, 1);  // PCM
    wr_u16(f, 1);  // mono
    wr_u32(f, kSampleRate);
    wr_u32(f, kSampleRate * 2);
    wr_u16(f, 2);
    wr_u16(f, 16);
    f.write("data", 4);
    wr_u32(f, data_len);
    for (double v : samples) {
        const double c = std::clamp(v, -1.0, 1.0);
        const int16_t s = static_cast<int16_t>(std::lrint(c * 32767.0));
        wr_u16(f, static_cast<uint16_t>(s));
    }
}

}  // namespace cacophony
