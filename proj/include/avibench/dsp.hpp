#pragma once

#include <complex>
#include <string>
#include <vector>

#include "avibench/dataset.hpp"

namespace avb {

struct DspConfig {
    int sample_rate = 16000;
    double window_sec = 1.0;
    int n_fft = 512;
    int hop = 256;
    int n_mels = 64;
    double fmin = 50.0;
    double fmax = 8000.0;
    double log_floor = 1e-10;

    void validate() const;               // throws ConfigError
    int window_len() const;              // samples per window
    int n_frames() const;                // STFT frames per window
};

// mel(f) = 2595 * log10(1 + f/700)
double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct Window {
    std::vector<double> samples;
    std::string clip_id;
    int index = 0;
};

// Splits a clip into ceil(duration / window_sec) windows; a window running
// past the clip's end is filled by cyclically repeating the clip from its
// start. Clips shorter than one window are fully covered by the same rule.
std::vector<Window> segment_clip(const AudioClip& clip, const DspConfig& cfg);

// Triangular mel filterbank, n_mels x (n_fft/2 + 1), centers equally spaced
// on the mel axis between mel(fmin) and mel(fmax).
struct MelFilterbank {
    int n_mels = 0;
    int n_bins = 0;
    std::vector<double> weights;          // row-major
    std::vector<double> center_hz;        // filter peak frequencies

    double at(int m, int b) const { return weights[static_cast<std::size_t>(m) * n_bins + b]; }
};

MelFilterbank mel_filterbank(const DspConfig& cfg);

struct MelSpectrogram {
    int n_mels = 0;
    int n_frames = 0;
    std::vector<float> values;  // row-major, n_mels x n_frames

    float at(int m, int f) const { return values[static_cast<std::size_t>(m) * n_frames + f]; }
    float& at(int m, int f) { return values[static_cast<std::size_t>(m) * n_frames + f]; }
};

// Hann-windowed magnitude STFT -> power -> mel projection ->
// log(power + log_floor) - log(log_floor), so silence maps to exactly 0.
MelSpectrogram mel_spectrogram(const Window& window, const DspConfig& cfg,
                               const MelFilterbank& fb);
MelSpectrogram mel_spectrogram(const Window& window, const DspConfig& cfg);

// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& a);

// --- spectrogram store -------------------------------------------------------
// Little-endian binary: magic "AVB1", u32 count, u32 n_mels, u32 n_frames,
// u32 n_classes, then per record a u32 label index and f32 values row-major.

struct SpectrogramRecord {
    int label = 0;
    MelSpectrogram spec;
};

struct SpectrogramStore {
    int n_mels = 0;
    int n_frames = 0;
    int n_classes = 0;
    std::vector<SpectrogramRecord> records;
};

void write_store(const SpectrogramStore& store, const std::string& path);
SpectrogramStore read_store(const std::string& path);

// P5 PGM dump, values min-max scaled to 0..255, for eyeballing spectrograms.
void write_pgm(const MelSpectrogram& s, const std::string& path);

}  // namespace avb
