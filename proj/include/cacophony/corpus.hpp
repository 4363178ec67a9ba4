#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cacophony {

enum class EventKind { sine, chirp, noise, am_tone, click_train };

const char* event_kind_name(EventKind kind);
EventKind event_kind_from_name(const std::string& name);
// Label text used by zero-shot classification over single-event clips.
std::string zero_shot_label(EventKind kind);

struct Event {
    EventKind kind;
    double start = 0.0;  // seconds
    double dur = 0.0;    // seconds
    double freq = 0.0;   // Hz; 0 when not applicable (noise)
    double freq2 = 0.0;  // chirp end frequency; 0 otherwise
};

struct CorpusItem {
    std::string wav_path;
    std::string caption;
    std::vector<Event> events;
    uint64_t item_seed = 0;  // drives noise rendering
};

struct SyntheticCorpus {
    uint64_t seed = 0;
    std::vector<CorpusItem> items;
};

struct CorpusSpec {
    uint64_t seed = 7;
    int n = 8;
    double dur_min = 1.0;
    double dur_max = 3.0;
    int max_events = 3;
    std::vector<EventKind> kinds = {EventKind::sine, EventKind::chirp, EventKind::noise, EventKind::am_tone,
                                    EventKind::click_train};
};

// Deterministic caption from event metadata, e.g.
// "a low sine tone then white noise".
std::string caption_for(const std::vector<Event>& events);

// Deterministic signal rendering at 16 kHz; noise draws come from item_seed.
std::vector<double> render_clip(const std::vector<Event>& events, int total_samples, uint64_t item_seed);

// Renders n clips into out_dir (clip_0000.wav, ...) plus manifest.jsonl.
// Bit-identical regeneration from the same spec.
SyntheticCorpus generate_corpus(const CorpusSpec& spec, const std::string& out_dir);

void save_manifest(const SyntheticCorpus& corpus, const std::string& path);
SyntheticCorpus load_manifest(const std::string& path);

}  // namespace cacophony
