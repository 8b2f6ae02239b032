#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ab::audio {

constexpr int kSampleRate = 16000;

struct AudioClip {
    std::vector<double> samples;  // within [-1, 1]
    int sample_rate = kSampleRate;
    std::string id;
    // synthesis ground truth, when the clip is synthetic
    bool has_truth = false;
    double truth_f0 = 0.0;     // Hz; 0 when not tonal
    std::string truth_class;   // class label; empty when not applicable
};

enum class SynthKind { harmonic_tone, chirp, noise_burst, animal_signature };

struct SynthParams {
    double f0 = 440.0;          // Hz; chirp start frequency
    double f1 = 0.0;            // chirp end frequency; 0 means equal to f0
    double duration = 1.0;      // seconds
    int partials = 1;           // harmonic stack height
    double amplitude = 0.5;     // peak before quantization
    std::string animal_class;   // required for animal_signature
};

// Deterministic synthesis. Samples are quantized onto the PCM16 grid before
// return, so a written-and-reread WAV is bit-identical to the in-memory clip.
AudioClip synth(SynthKind kind, const SynthParams& p, uint64_t seed);

struct UnvoicedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Average fundamental frequency: frame-wise YIN (cumulative mean normalized
// difference, threshold 0.15, parabolic refinement), averaged over frames
// whose RMS exceeds 10% of the clip RMS. Throws UnvoicedError when no frame
// yields a pitch.
double estimate_pitch(const AudioClip& clip);

struct Spectrogram {
    int64_t frames = 0;
    int64_t bins = 0;
    double hop_seconds = 0.0;
    std::vector<double> data;  // frames x bins, row-major

    double at(int64_t f, int64_t b) const { return data[static_cast<size_t>(f * bins + b)]; }
};

// Magnitude STFT (Hann window) -> HTK mel filterbank -> log(x + 1e-6).
Spectrogram logmel(const AudioClip& clip, int bins = 64, double window_s = 0.025, double hop_s = 0.010);

// Linear-interpolation resampling; used to bring ingested files to 16 kHz.
AudioClip resample(const AudioClip& clip, int sr);

// RIFF/WAVE PCM16 mono only; samples scale by 1/32768.
AudioClip read_wav(const std::string& path);
void write_wav(const AudioClip& clip, const std::string& path);

}  // namespace ab::audio
