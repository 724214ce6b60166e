#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace avb {

// Decoded mono audio, amplitudes normalized to [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 0;
    std::string source_path;
};

struct ClipRef {
    std::string path;
    double duration_sec = 0.0;
    int n_cuts = 0;  // one-second cuts this clip yields (= ceil(duration))
};

// A group of clips recorded together; the atomic unit of split assignment.
struct SessionRecord {
    std::string session_id;
    std::string class_label;
    std::vector<ClipRef> clips;
    int sample_count = 0;  // total cuts over clips
};

struct Manifest {
    std::vector<SessionRecord> sessions;
    std::vector<std::string> classes;  // sorted distinct labels

    void validate() const;  // throws ValidationError
    int class_index(const std::string& label) const;
    std::map<std::string, long> cuts_per_class() const;
    long total_cuts() const;
};

// Derives the class list and checks invariants.
Manifest make_manifest(std::vector<SessionRecord> sessions);

// CSV schema: session_id,class_label,clip_path,duration_sec,n_cuts
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

// PCM WAV: 8/16/24-bit integer or 32-bit float, mono or stereo
// (stereo is averaged to mono).
AudioClip decode_audio(const std::string& path);
void write_wav16(const std::string& path, const std::vector<double>& samples, int sample_rate);

struct SummaryRow {
    std::string class_label;
    std::string sound_type;
    double total_seconds = 0.0;
    long n_cuts = 0;
};

struct Summary {
    std::vector<SummaryRow> rows;  // one per class, manifest class order
    SummaryRow totals;
};

Summary summarize(const Manifest& m);
std::string summary_csv(const Summary& s);

// --- synthetic desk-scale dataset -----------------------------------------

struct SessionRange {
    int n_sessions_min = 1, n_sessions_max = 1;
    int cuts_min = 1, cuts_max = 1;  // cuts per session
};

struct SyntheticClassSpec {
    std::string label;
    double tone_hz = 0.0;
    // Either explicit sessions (clip durations in seconds, n_cuts = ceil)
    // or a range the generator draws from.
    std::vector<std::vector<double>> sessions;
    std::optional<SessionRange> range;
};

struct SyntheticSpec {
    int sample_rate = 16000;
    double noise_amplitude = 0.05;
    std::uint64_t seed = 0;
    std::vector<SyntheticClassSpec> classes;

    void validate() const;  // distinct tones below Nyquist, >= 2 classes
};

// The 4-class spec used by tests and the bundled default config:
// per-class cut totals {40, 20, 10, 10}, tones well separated in mel space,
// kept small so a search trial trains in well under a second.
SyntheticSpec bundled_4class_spec();

// Writes one WAV per clip under out_dir/audio/ plus out_dir/manifest.csv.
// Pure function of the spec: a fixed seed gives byte-identical files.
Manifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

}  // namespace avb
