#include "avibench/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "avibench/common.hpp"

namespace avb {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void DspConfig::validate() const {
    if (sample_rate <= 0) throw ConfigError("dsp: sample_rate must be positive");
    if (window_sec <= 0.0) throw ConfigError("dsp: window_sec must be positive");
    if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0)
        throw ConfigError("dsp: n_fft must be a power of two");
    if (hop < 1 || hop > n_fft) throw ConfigError("dsp: hop must be in [1, n_fft]");
    if (n_mels < 1) throw ConfigError("dsp: n_mels must be >= 1");
    if (!(0.0 <= fmin && fmin < fmax && fmax <= sample_rate / 2.0))
        throw ConfigError("dsp: need 0 <= fmin < fmax <= sample_rate/2");
    if (log_floor <= 0.0) throw ConfigError("dsp: log_floor must be positive");
    if (window_len() < n_fft) throw ConfigError("dsp: window shorter than n_fft");
}

int DspConfig::window_len() const {
    return static_cast<int>(std::lround(window_sec * sample_rate));
}

int DspConfig::n_frames() const { return (window_len() - n_fft) / hop + 1; }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<Window> segment_clip(const AudioClip& clip, const DspConfig& cfg) {
    if (clip.samples.empty()) throw ValidationError("segment_clip: empty clip");
    if (clip.sample_rate != cfg.sample_rate)
        throw ValidationError("segment_clip: clip rate " + std::to_string(clip.sample_rate) +
                              " does not match pipeline rate " +
                              std::to_string(cfg.sample_rate) + " (" + clip.source_path + ")");
    const std::size_t len = static_cast<std::size_t>(cfg.window_len());
    const std::size_t n = clip.samples.size();
    const std::size_t n_windows = (n + len - 1) / len;
    std::vector<Window> out(n_windows);
    for (std::size_t w = 0; w < n_windows; ++w) {
        out[w].clip_id = clip.source_path;
        out[w].index = static_cast<int>(w);
        out[w].samples.resize(len);
        for (std::size_t i = 0; i < len; ++i)
            out[w].samples[i] = clip.samples[(w * len + i) % n];
    }
    return out;
}

void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw ConfigError("fft: size must be a power of two");
    // bit reversal
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

MelFilterbank mel_filterbank(const DspConfig& cfg) {
    cfg.validate();
    MelFilterbank fb;
    fb.n_mels = cfg.n_mels;
    fb.n_bins = cfg.n_fft / 2 + 1;
    fb.weights.assign(static_cast<std::size_t>(fb.n_mels) * fb.n_bins, 0.0);
    fb.center_hz.resize(cfg.n_mels);

    // n_mels + 2 points equally spaced on the mel axis
    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges_hz(static_cast<std::size_t>(cfg.n_mels) + 2);
    for (std::size_t i = 0; i < edges_hz.size(); ++i)
        edges_hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                             (cfg.n_mels + 1));

    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.n_fft;
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double lo = edges_hz[static_cast<std::size_t>(m)];
        const double center = edges_hz[static_cast<std::size_t>(m) + 1];
        const double hi = edges_hz[static_cast<std::size_t>(m) + 2];
        fb.center_hz[static_cast<std::size_t>(m)] = center;
        bool any = false;
        for (int b = 0; b < fb.n_bins; ++b) {
            const double f = b * bin_hz;
            double w = 0.0;
            if (f > lo && f < center)
                w = (f - lo) / (center - lo);
            else if (f >= center && f < hi)
                w = (hi - f) / (hi - center);
            if (w > 0.0) {
                fb.weights[static_cast<std::size_t>(m) * fb.n_bins + b] = w;
                any = true;
            }
        }
        if (!any)
            throw ConfigError("dsp: mel filter " + std::to_string(m) +
                              " is empty; reduce n_mels or increase n_fft");
    }
    return fb;
}

MelSpectrogram mel_spectrogram(const Window& window, const DspConfig& cfg,
                               const MelFilterbank& fb) {
    const int len = cfg.window_len();
    if (static_cast<int>(window.samples.size()) != len)
        throw ValidationError("mel_spectrogram: window length does not match config");
    const int n_frames = cfg.n_frames();
    const int n_bins = cfg.n_fft / 2 + 1;

    // periodic Hann
    std::vector<double> hann(static_cast<std::size_t>(cfg.n_fft));
    for (int i = 0; i < cfg.n_fft; ++i)
        hann[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / cfg.n_fft));

    MelSpectrogram out;
    out.n_mels = cfg.n_mels;
    out.n_frames = n_frames;
    out.values.assign(static_cast<std::size_t>(cfg.n_mels) * n_frames, 0.0f);

    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
    std::vector<double> power(static_cast<std::size_t>(n_bins));
    const double log_floor = cfg.log_floor;
    const double log_floor_log = std::log(log_floor);
    for (int f = 0; f < n_frames; ++f) {
        const int start = f * cfg.hop;
        for (int i = 0; i < cfg.n_fft; ++i) {
            const int idx = start + i;
            const double s = idx < len ? window.samples[static_cast<std::size_t>(idx)] : 0.0;
            buf[static_cast<std::size_t>(i)] = s * hann[static_cast<std::size_t>(i)];
        }
        fft(buf);
        for (int b = 0; b < n_bins; ++b) power[static_cast<std::size_t>(b)] = std::norm(buf[static_cast<std::size_t>(b)]);
        for (int m = 0; m < cfg.n_mels; ++m) {
            const double* w = &fb.weights[static_cast<std::size_t>(m) * n_bins];
            double acc = 0.0;
            for (int b = 0; b < n_bins; ++b) acc += w[b] * power[static_cast<std::size_t>(b)];
            const double v = std::log(acc + log_floor) - log_floor_log;
            if (!std::isfinite(v)) throw NumericError("mel_spectrogram: non-finite value");
            out.at(m, f) = static_cast<float>(v);
        }
    }
    return out;
}

MelSpectrogram mel_spectrogram(const Window& window, const DspConfig& cfg) {
    return mel_spectrogram(window, cfg, mel_filterbank(cfg));
}

// --- store -------------------------------------------------------------------

namespace {

void wr_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                       static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    os.write(b, 4);
}

std::uint32_t rd_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("spectrogram store: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_store(const SpectrogramStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write spectrogram store: " + path);
    out.write("AVB1", 4);
    wr_u32(out, static_cast<std::uint32_t>(store.records.size()));
    wr_u32(out, static_cast<std::uint32_t>(store.n_mels));
    wr_u32(out, static_cast<std::uint32_t>(store.n_frames));
    wr_u32(out, static_cast<std::uint32_t>(store.n_classes));
    for (const SpectrogramRecord& r : store.records) {
        if (r.spec.n_mels != store.n_mels || r.spec.n_frames != store.n_frames)
            throw ValidationError("spectrogram store: record shape mismatch");
        wr_u32(out, static_cast<std::uint32_t>(r.label));
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(r.spec.values.data()),
                  static_cast<std::streamsize>(r.spec.values.size() * 4));
    }
}

SpectrogramStore read_store(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open spectrogram store: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "AVB1", 4) != 0)
        throw ParseError(path + ": bad magic, not a spectrogram store");
    SpectrogramStore store;
    const std::uint32_t count = rd_u32(in);
    store.n_mels = static_cast<int>(rd_u32(in));
    store.n_frames = static_cast<int>(rd_u32(in));
    store.n_classes = static_cast<int>(rd_u32(in));
    store.records.resize(count);
    const std::size_t n_values =
        static_cast<std::size_t>(store.n_mels) * static_cast<std::size_t>(store.n_frames);
    for (std::uint32_t i = 0; i < count; ++i) {
        SpectrogramRecord& r = store.records[i];
        r.label = static_cast<int>(rd_u32(in));
        r.spec.n_mels = store.n_mels;
        r.spec.n_frames = store.n_frames;
        r.spec.values.resize(n_values);
        in.read(reinterpret_cast<char*>(r.spec.values.data()),
                static_cast<std::streamsize>(n_values * 4));
        if (!in) throw ParseError(path + ": truncated record " + std::to_string(i));
    }
    return store;
}

void write_pgm(const MelSpectrogram& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write PGM: " + path);
    float lo = s.values.empty() ? 0.0f : s.values[0];
    float hi = lo;
    for (float v : s.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi > lo ? hi - lo : 1.0f;
    out << "P5\n" << s.n_frames << ' ' << s.n_mels << "\n255\n";
    // row 0 at the top = highest mel band, the usual spectrogram orientation
    for (int m = s.n_mels - 1; m >= 0; --m)
        for (int f = 0; f < s.n_frames; ++f) {
            const float v = (s.at(m, f) - lo) / span;
            out.put(static_cast<char>(std::lround(v * 255.0f)));
        }
}

}  // namespace avb
