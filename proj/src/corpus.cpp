#include "cacophony/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "cacophony/rng.hpp"
#include "cacophony/wav.hpp"

#include <json.hpp>

namespace cacophony {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kEventAmp = 0.4;

// 10 ms raised-cosine edges keep event boundaries click-free.
double edge_ramp(double t_local, double dur) {
    constexpr double ramp = 0.01;
    if (t_local < ramp) return 0.5 * (1.0 - std::cos(kTwoPi / 2.0 * t_local / ramp));
    if (t_local > dur - ramp) return 0.5 * (1.0 - std::cos(kTwoPi / 2.0 * (dur - t_local) / ramp));
    return 1.0;
}

void render_event(std::vector<double>& out, const Event& ev, Rng& rng) {
    const int first = static_cast<int>(std::lround(ev.start * kSampleRate));
    const int count = static_cast<int>(std::lround(ev.dur * kSampleRate));
    for (int i = 0; i < count; ++i) {
        const int n = first + i;
        if (n < 0 || n >= static_cast<int>(out.size())) continue;
        const double t = static_cast<double>(i) / kSampleRate;
        double s = 0.0;
        switch (ev.kind) {
            case EventKind::sine:
                s = std::sin(kTwoPi * ev.freq * t);
                break;
            case EventKind::chirp: {
                const double rate = (ev.freq2 - ev.freq) / (2.0 * ev.dur);
                s = std::sin(kTwoPi * (ev.freq * t + rate * t * t));
                break;
            }
            case EventKind::noise:
                s = rng.uniform(-1.0, 1.0);
                break;
            case EventKind::am_tone:
                s = std::sin(kTwoPi * ev.freq * t) * 0.5 * (1.0 - std::cos(kTwoPi * 4.0 * t));
                break;
            case EventKind::click_train: {
                // damped pings at 8 per second
                const double within = std::fmod(t, 0.125);
                s = within < 0.03 ? std::sin(kTwoPi * ev.freq * within) * std::exp(-within / 0.005) : 0.0;
                break;
            }
        }
        out[static_cast<size_t>(n)] += kEventAmp * edge_ramp(t, ev.dur) * s;
    }
}

std::string sine_phrase(double freq) {
    if (freq < 440.0) return "a low sine tone";
    if (freq < 880.0) return "a mid sine tone";
    return "a high sine tone";
}

std::string event_phrase(const Event& ev) {
    switch (ev.kind) {
        case EventKind::sine:
            return sine_phrase(ev.freq);
        case EventKind::chirp:
            return ev.freq2 > ev.freq ? "a rising chirp" : "a falling chirp";
        case EventKind::noise:
            return "white noise";
        case EventKind::am_tone:
            return "a pulsing tone";
        case EventKind::click_train:
            return "a series of clicks";
    }
    return "";
}

}  // namespace

const char* event_kind_name(EventKind kind) {
    switch (kind) {
        case EventKind::sine: return "sine";
        case EventKind::chirp: return "chirp";
        case EventKind::noise: return "noise";
        case EventKind::am_tone: return "am_tone";
        case EventKind::click_train: return "click_train";
    }
    return "";
}

EventKind event_kind_from_name(const std::string& name) {
    for (EventKind k : {EventKind::sine, EventKind::chirp, EventKind::noise, EventKind::am_tone,
                        EventKind::click_train})
        if (name == event_kind_name(k)) return k;
    throw std::invalid_argument("unknown event kind: " + name);
}

std::string zero_shot_label(EventKind kind) {
    switch (kind) {
        case EventKind::sine: return "sine tone";
        case EventKind::chirp: return "chirp";
        case EventKind::noise: return "white noise";
        case EventKind::am_tone: return "pulsing tone";
        case EventKind::click_train: return "clicks";
    }
    return "";
}

std::string caption_for(const std::vector<Event>& events) {
    std::string caption;
    for (const Event& ev : events) {
        if (!caption.empty()) caption += " then ";
        caption += event_phrase(ev);
    }
    return caption;
}

std::vector<double> render_clip(const std::vector<Event>& events, int total_samples, uint64_t item_seed) {
    std::vector<double> out(static_cast<size_t>(total_samples), 0.0);
    Rng rng(mix_seed(item_seed, 0x5EED));
    for (const Event& ev : events) render_event(out, ev, rng);
    return out;
}

SyntheticCorpus generate_corpus(const CorpusSpec& spec, const std::string& out_dir) {
    if (spec.n < 1) throw std::invalid_argument("generate_corpus: n must be >= 1");
    if (spec.kinds.empty()) throw std::invalid_argument("generate_corpus: no event kinds");
    std::filesystem::create_directories(out_dir);

    static const double sine_freqs[] = {220, 330, 440, 660, 880, 1320, 1760};
    static const double chirp_freqs[] = {300, 500, 800};
    static const double am_freqs[] = {440, 880};
    static const double click_freqs[] = {1500, 2500};

    SyntheticCorpus corpus;
    corpus.seed = spec.seed;
    for (int i = 0; i < spec.n; ++i) {
        CorpusItem item;
        item.item_seed = mix_seed(spec.seed, static_cast<uint64_t>(i));
        Rng rng(item.item_seed);

        const double dur = spec.dur_min + (spec.dur_max - spec.dur_min) * rng.uniform();
        const int n_events = 1 + rng.uniform_int(std::max(1, spec.max_events));
        const double slot = dur / n_events;
        for (int e = 0; e < n_events; ++e) {
            Event ev;
            ev.kind = spec.kinds[static_cast<size_t>(rng.uniform_int(static_cast<int>(spec.kinds.size())))];
            ev.start = e * slot + 0.05 * slot * rng.uniform();
            ev.dur = slot * (0.6 + 0.3 * rng.uniform());
            switch (ev.kind) {
                case EventKind::sine:
                    ev.freq = sine_freqs[rng.uniform_int(7)];
                    break;
                case EventKind::chirp:
                    ev.freq = chirp_freqs[rng.uniform_int(3)];
                    ev.freq2 = rng.uniform() < 0.5 ? ev.freq * 2.0 : ev.freq * 0.5;
                    break;
                case EventKind::noise:
                    break;
                case EventKind::am_tone:
                    ev.freq = am_freqs[rng.uniform_int(2)];
                    break;
                case EventKind::click_train:
                    ev.freq = click_freqs[rng.uniform_int(2)];
                    break;
            }
            item.events.push_back(ev);
        }
        item.caption = caption_for(item.events);

        char name[32];
        std::snprintf(name, sizeof(name), "clip_%04d.wav", i);
        item.wav_path = (std::filesystem::path(out_dir) / name).string();
        const int total = static_cast<int>(std::lround(dur * kSampleRate));
        write_wav(item.wav_path, render_clip(item.events, total, item.item_seed));
        corpus.items.push_back(std::move(item));
    }
    save_manifest(corpus, (std::filesystem::path(out_dir) / "manifest.jsonl").string());
    return corpus;
}

void save_manifest(const SyntheticCorpus& corpus, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
    for (const auto& item : corpus.items) {
        nlohmann::json j;
        j["path"] = item.wav_path;
        j["caption"] = item.caption;
        j["seed"] = item.item_seed;
        j["corpus_seed"] = corpus.seed;
        nlohmann::json events = nlohmann::json::array();
        for (const auto& ev : item.events)
            events.push_back({{"kind", event_kind_name(ev.kind)},
                              {"start", ev.start},
                              {"dur", ev.dur},
                              {"freq", ev.freq},
                              {"freq2", ev.freq2}});
        j["events"] = events;
        f << j.dump() << "\n";
    }
}

SyntheticCorpus load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
    SyntheticCorpus corpus;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        CorpusItem item;
        item.wav_path = j.at("path").get<std::string>();
        item.caption = j.at("caption").get<std::string>();
        item.item_seed = j.at("seed").get<uint64_t>();
        corpus.seed = j.at("corpus_seed").get<uint64_t>();
        for (const auto& ev : j.at("events")) {
            Event e;
            e.kind = event_kind_from_name(ev.at("kind").get<std::string>());
            e.start = ev.at("start").get<double>();
            e.dur = ev.at("dur").get<double>();
            e.freq = ev.at("freq").get<double>();
            e.freq2 = ev.at("freq2").get<double>();
            item.events.push_back(e);
        }
        corpus.items.push_back(std::move(item));
    }
    return corpus;
}

}  // namespace cacophony
