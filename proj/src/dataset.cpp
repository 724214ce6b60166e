#include "avibench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "avibench/common.hpp"
#include "avibench/rng.hpp"

namespace fs = std::filesystem;

namespace avb {

// --- manifest ---------------------------------------------------------------

void Manifest::validate() const {
    if (sessions.empty()) throw ValidationError("manifest: no sessions");
    std::set<std::string> ids;
    std::set<std::string> labels;
    for (const SessionRecord& s : sessions) {
        if (!ids.insert(s.session_id).second)
            throw ValidationError("manifest: duplicate session_id '" + s.session_id + "'");
        if (s.clips.empty())
            throw ValidationError("manifest: session '" + s.session_id + "' has no clips");
        if (s.sample_count < 1)
            throw ValidationError("manifest: session '" + s.session_id + "' has sample_count < 1");
        int cuts = 0;
        for (const ClipRef& c : s.clips) cuts += c.n_cuts;
        if (cuts != s.sample_count)
            throw ValidationError("manifest: session '" + s.session_id +
                                  "' sample_count does not match clip cuts");
        labels.insert(s.class_label);
    }
    if (classes.size() != labels.size() ||
        !std::equal(classes.begin(), classes.end(), labels.begin()))
        throw ValidationError("manifest: class list is not the sorted distinct label set");
}

int Manifest::class_index(const std::string& label) const {
    const auto it = std::lower_bound(classes.begin(), classes.end(), label);
    if (it == classes.end() || *it != label)
        throw ValidationError("manifest: unknown class '" + label + "'");
    return static_cast<int>(it - classes.begin());
}

std::map<std::string, long> Manifest::cuts_per_class() const {
    std::map<std::string, long> out;
    for (const auto& c : classes) out[c] = 0;
    for (const SessionRecord& s : sessions) out[s.class_label] += s.sample_count;
    return out;
}

long Manifest::total_cuts() const {
    long t = 0;
    for (const SessionRecord& s : sessions) t += s.sample_count;
    return t;
}

Manifest make_manifest(std::vector<SessionRecord> sessions) {
    Manifest m;
    m.sessions = std::move(sessions);
    std::set<std::string> labels;
    for (auto& s : m.sessions) {
        int cuts = 0;
        for (const ClipRef& c : s.clips) cuts += c.n_cuts;
        s.sample_count = cuts;
        labels.insert(s.class_label);
    }
    m.classes.assign(labels.begin(), labels.end());
    m.validate();
    return m;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    if (split_csv_line(line) !=
        std::vector<std::string>{"session_id", "class_label", "clip_path", "duration_sec",
                                 "n_cuts"})
        throw ParseError(path + ":1: bad header row");

    // group rows into sessions by session_id, preserving first-appearance order
    std::vector<SessionRecord> sessions;
    std::map<std::string, std::size_t> by_id;
    std::set<std::pair<std::string, std::string>> seen_clips;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = split_csv_line(line);
        if (cols.size() != 5)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected 5 columns, got " +
                             std::to_string(cols.size()));
        ClipRef clip;
        clip.path = cols[2];
        try {
            std::size_t pos = 0;
            clip.duration_sec = std::stod(cols[3], &pos);
            if (pos != cols[3].size()) throw std::invalid_argument("");
            pos = 0;
            clip.n_cuts = std::stoi(cols[4], &pos);
            if (pos != cols[4].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": non-numeric duration_sec or n_cuts");
        }
        if (clip.duration_sec <= 0.0 || clip.n_cuts < 1)
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": duration_sec and n_cuts must be positive");
        if (!seen_clips.insert({cols[0], clip.path}).second)
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": duplicate (session_id, clip_path)");

        const auto it = by_id.find(cols[0]);
        if (it == by_id.end()) {
            by_id[cols[0]] = sessions.size();
            SessionRecord s;
            s.session_id = cols[0];
            s.class_label = cols[1];
            s.clips.push_back(std::move(clip));
            sessions.push_back(std::move(s));
        } else {
            SessionRecord& s = sessions[it->second];
            if (s.class_label != cols[1])
                throw ValidationError(path + ":" + std::to_string(lineno) + ": session '" +
                                      cols[0] + "' mixes labels '" + s.class_label + "' and '" +
                                      cols[1] + "'");
            s.clips.push_back(std::move(clip));
        }
    }
    return make_manifest(std::move(sessions));
}

void save_manifest(const Manifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << "session_id,class_label,clip_path,duration_sec,n_cuts\n";
    for (const SessionRecord& s : m.sessions)
        for (const ClipRef& c : s.clips) {
            char dur[32];
            std::snprintf(dur, sizeof(dur), "%.6g", c.duration_sec);
            out << s.session_id << ',' << s.class_label << ',' << c.path << ',' << dur << ','
                << c.n_cuts << '\n';
        }
}

// --- WAV --------------------------------------------------------------------

namespace {

std::uint32_t rd_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                       static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    os.write(b, 4);
}

void wr_u16(std::ostream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

}  // namespace

AudioClip decode_audio(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open audio file: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw ParseError(path + ": not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const std::uint8_t* data = nullptr;
    std::uint32_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const std::uint32_t chunk_len = rd_u32(&buf[pos + 4]);
        if (pos + 8 + chunk_len > buf.size())
            throw ParseError(path + ": truncated chunk");
        if (std::memcmp(&buf[pos], "fmt ", 4) == 0) {
            if (chunk_len < 16) throw ParseError(path + ": short fmt chunk");
            format = rd_u16(&buf[pos + 8]);
            channels = rd_u16(&buf[pos + 10]);
            rate = rd_u32(&buf[pos + 12]);
            bits = rd_u16(&buf[pos + 22]);
        } else if (std::memcmp(&buf[pos], "data", 4) == 0) {
            data = &buf[pos + 8];
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (rate == 0 || channels == 0) throw ParseError(path + ": missing fmt chunk");
    if (data == nullptr) throw ParseError(path + ": missing data chunk");
    if (channels > 2) throw ParseError(path + ": more than two channels");

    const bool is_float = format == 3 && bits == 32;
    const bool is_pcm = format == 1 && (bits == 8 || bits == 16 || bits == 24);
    if (!is_float && !is_pcm)
        throw ParseError(path + ": unsupported encoding (format " + std::to_string(format) +
                         ", " + std::to_string(bits) + "-bit)");

    const std::size_t bytes_per = bits / 8;
    const std::size_t frame_bytes = bytes_per * channels;
    if (data_len % frame_bytes != 0) throw ParseError(path + ": truncated sample data");
    const std::size_t n_frames = data_len / frame_bytes;
    if (n_frames == 0) throw ParseError(path + ": empty data chunk");

    auto read_sample = [&](const std::uint8_t* p) -> double {
        switch (bits) {
            case 8:
                return (static_cast<int>(*p) - 128) / 128.0;
            case 16: {
                const std::int16_t v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
                return v / 32768.0;
            }
            case 24: {
                std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
                if (v & 0x800000) v |= ~0xffffff;
                return v / 8388608.0;
            }
            default: {  // 32-bit float
                float f;
                std::memcpy(&f, p, 4);
                return std::clamp(static_cast<double>(f), -1.0, 1.0);
            }
        }
    };

    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.source_path = path;
    clip.samples.resize(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) {
        const std::uint8_t* p = data + i * frame_bytes;
        double v = read_sample(p);
        if (channels == 2) v = 0.5 * (v + read_sample(p + bytes_per));
        clip.samples[i] = v;
    }
    return clip;
}

void write_wav16(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    if (samples.empty()) throw ValidationError("write_wav16: no samples");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write audio file: " + path);
    const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
    out.write("RIFF", 4);
    wr_u32(out, 36 + data_len);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    wr_u32(out, 16);
    wr_u16(out, 1);  // PCM
    wr_u16(out, 1);  // mono
    wr_u32(out, static_cast<std::uint32_t>(sample_rate));
    wr_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
    wr_u16(out, 2);
    wr_u16(out, 16);
    out.write("data", 4);
    wr_u32(out, data_len);
    for (double s : samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        wr_u16(out, static_cast<std::uint16_t>(
                        static_cast<std::int16_t>(std::lround(c * 32767.0))));
    }
}

// --- summary ----------------------------------------------------------------

Summary summarize(const Manifest& m) {
    m.validate();
    Summary sum;
    sum.rows.resize(m.classes.size());
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        // labels of the form "species:soundtype" split into two columns
        const std::string& label = m.classes[i];
        const auto colon = label.find(':');
        sum.rows[i].class_label = colon == std::string::npos ? label : label.substr(0, colon);
        sum.rows[i].sound_type = colon == std::string::npos ? "-" : label.substr(colon + 1);
    }
    for (const SessionRecord& s : m.sessions) {
        SummaryRow& row = sum.rows[static_cast<std::size_t>(m.class_index(s.class_label))];
        for (const ClipRef& c : s.clips) {
            row.total_seconds += c.duration_sec;
            row.n_cuts += c.n_cuts;
        }
    }
    sum.totals.class_label = "Total";
    sum.totals.sound_type = "-";
    for (const SummaryRow& r : sum.rows) {
        sum.totals.total_seconds += r.total_seconds;
        sum.totals.n_cuts += r.n_cuts;
    }
    return sum;
}

std::string summary_csv(const Summary& s) {
    std::ostringstream os;
    os << "class,sound_type,total_seconds,n_cuts\n";
    auto emit = [&os](const SummaryRow& r) {
        char sec[32];
        std::snprintf(sec, sizeof(sec), "%.2f", r.total_seconds);
        os << r.class_label << ',' << r.sound_type << ',' << sec << ',' << r.n_cuts << '\n';
    };
    for (const SummaryRow& r : s.rows) emit(r);
    emit(s.totals);
    return os.str();
}

// --- synthetic --------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (classes.size() < 2) throw ConfigError("synthetic spec: need at least 2 classes");
    if (sample_rate <= 0) throw ConfigError("synthetic spec: sample_rate must be positive");
    std::set<double> tones;
    for (const SyntheticClassSpec& c : classes) {
        if (c.tone_hz <= 0.0 || c.tone_hz >= sample_rate / 2.0)
            throw ConfigError("synthetic spec: tone for '" + c.label +
                              "' must lie in (0, Nyquist)");
        if (!tones.insert(c.tone_hz).second)
            throw ConfigError("synthetic spec: duplicate tone frequency");
        if (c.sessions.empty() && !c.range)
            throw ConfigError("synthetic spec: class '" + c.label +
                              "' has neither explicit sessions nor a range");
    }
}

SyntheticSpec bundled_4class_spec() {
    SyntheticSpec spec;
    spec.sample_rate = 4000;
    spec.noise_amplitude = 0.05;
    spec.seed = 7;
    // Session cut totals per class: 40, 20, 10, 10. Fractional durations
    // exercise the repetition fill; session sizes give every class presence
    // in all three sets under the default 70/20/10 split.
    spec.classes = {
        {"tone600", 600.0, {{3.0, 2.5, 2.75, 1.0, 1.75},  // 12 cuts
                            {2.0, 2.5, 1.75, 2.0},        // 9
                            {3.0, 2.75, 0.5},             // 7
                            {2.5, 1.75},                  // 5
                            {1.0, 1.5, 0.75},             // 4
                            {1.75},                       // 2
                            {0.5}},                       // 1
         std::nullopt},
        {"tone1050", 1050.0, {{2.0, 2.5, 1.0},                 // 6
                              {2.75, 1.5},                     // 5
                              {1.0, 1.75},                     // 3
                              {2.0},                           // 2
                              {1.5},                           // 2
                              {0.75},                          // 1
                              {1.0}},                          // 1
         std::nullopt},
        {"tone1450", 1450.0, {{2.0, 1.5}, {2.75}, {2.0}, {0.5}}, std::nullopt},  // 4,3,2,1
        {"tone1900", 1900.0, {{1.0, 1.75, 0.75}, {2.5}, {1.25}, {1.0}},          // 4,3,2,1
         std::nullopt},
    };
    spec.validate();
    return spec;
}

namespace {

std::vector<double> synth_clip(double tone_hz, double duration_sec, int sample_rate,
                               double noise_amplitude, Rng& rng) {
    const auto n = static_cast<std::size_t>(std::lround(duration_sec * sample_rate));
    std::vector<double> samples(n);
    const double w = 2.0 * 3.14159265358979323846 * tone_hz / sample_rate;
    for (std::size_t i = 0; i < n; ++i) {
        double v = 0.6 * std::sin(w * static_cast<double>(i));
        if (noise_amplitude > 0.0) v += noise_amplitude * rng.normal();
        samples[i] = std::clamp(v, -1.0, 1.0);
    }
    return samples;
}

}  // namespace

Manifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    spec.validate();
    fs::create_directories(fs::path(out_dir) / "audio");

    std::vector<SessionRecord> sessions;
    for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
        const SyntheticClassSpec& cls = spec.classes[ci];

        // materialize session clip-duration lists
        std::vector<std::vector<double>> durations = cls.sessions;
        if (durations.empty() && cls.range) {
            Rng rng(mix_seed(spec.seed, mix_seed(0x5e551011u, ci)));
            const SessionRange& r = *cls.range;
            const int n_sessions =
                r.n_sessions_min +
                static_cast<int>(rng.uniform_int(
                    static_cast<std::uint64_t>(r.n_sessions_max - r.n_sessions_min + 1)));
            for (int s = 0; s < n_sessions; ++s) {
                int cuts = r.cuts_min +
                           static_cast<int>(rng.uniform_int(
                               static_cast<std::uint64_t>(r.cuts_max - r.cuts_min + 1)));
                std::vector<double> clips;
                while (cuts > 0) {
                    const int c = std::min<int>(cuts, 1 + static_cast<int>(rng.uniform_int(3)));
                    clips.push_back(rng.uniform() < 0.5 ? static_cast<double>(c)
                                                        : c - 0.25 - 0.5 * rng.uniform());
                    cuts -= c;
                }
                durations.push_back(std::move(clips));
            }
        }

        fs::create_directories(fs::path(out_dir) / "audio" / cls.label);
        for (std::size_t si = 0; si < durations.size(); ++si) {
            SessionRecord rec;
            rec.session_id = cls.label + "_s" + std::to_string(si);
            rec.class_label = cls.label;
            for (std::size_t ki = 0; ki < durations[si].size(); ++ki) {
                const double d = durations[si][ki];
                Rng rng(mix_seed(spec.seed, mix_seed(ci, mix_seed(si, ki))));
                const auto samples =
                    synth_clip(cls.tone_hz, d, spec.sample_rate, spec.noise_amplitude, rng);
                ClipRef clip;
                clip.path = (fs::path("audio") / cls.label /
                             (rec.session_id + "_c" + std::to_string(ki) + ".wav"))
                                .generic_string();
                clip.duration_sec = d;
                clip.n_cuts = static_cast<int>(std::ceil(d));
                write_wav16((fs::path(out_dir) / clip.path).string(), samples,
                            spec.sample_rate);
                rec.clips.push_back(std::move(clip));
            }
            sessions.push_back(std::move(rec));
        }
    }
    Manifest m = make_manifest(std::move(sessions));
    save_manifest(m, (fs::path(out_dir) / "manifest.csv").string());
    return m;
}

}  // namespace avb
