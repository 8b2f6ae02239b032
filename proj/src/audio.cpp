#include "audiobert/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include "audiobert/rng.hpp"

namespace ab::audio {

namespace {

constexpr double kPi = std::numbers::pi;

double quantize_pcm16(double x) {
    const double clamped = std::clamp(x, -1.0, 1.0);
    const long long q = std::clamp(std::llround(clamped * 32768.0), -32768ll, 32767ll);
    return static_cast<double>(q) / 32768.0;
}

void quantize_clip(AudioClip& clip) {
    for (auto& s : clip.samples) s = quantize_pcm16(s);
}

void apply_fade(std::vector<double>& s, int sr) {
    const size_t fade = std::min(s.size() / 4, static_cast<size_t>(sr / 100));  // 10 ms
    for (size_t i = 0; i < fade; ++i) {
        const double g = static_cast<double>(i) / static_cast<double>(fade);
        s[i] *= g;
        s[s.size() - 1 - i] *= g;
    }
}

void normalize_peak(std::vector<double>& s, double amplitude) {
    double peak = 0.0;
    for (double v : s) peak = std::max(peak, std::abs(v));
    if (peak > 0.0) {
        const double g = amplitude / peak;
        for (auto& v : s) v *= g;
    }
}

// ---- radix-2 FFT, used by the pitch tracker and the mel front end ----

void fft_inplace(std::vector<std::complex<double>>& a, bool invert) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * kPi / static_cast<double>(len) * (invert ? 1.0 : -1.0);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (invert)
        for (auto& x : a) x /= static_cast<double>(n);
}

size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// ---- class-specific animal voices; log-spaced fundamentals keep the mel
// profiles of distinct classes apart even under per-clip jitter ----

struct AnimalVoice {
    const char* name;
    double f0;
};

constexpr AnimalVoice kAnimalVoices[] = {
    {"lion", 105},    {"elephant", 122}, {"cow", 141},      {"tiger", 163},
    {"horse", 188},   {"frog", 218},     {"pig", 252},      {"sheep", 292},
    {"dog", 338},     {"owl", 391},      {"turkey", 452},   {"crow", 523},
    {"wolf", 605},    {"duck", 700},     {"monkey", 810},   {"cat", 937},
    {"rooster", 1084}, {"seagull", 1254}, {"mouse", 1451},  {"bee", 1679},
    {"sparrow", 1942}, {"cricket", 2247}, {"mosquito", 2600}, {"snake", 3008},
};

struct VoiceRecipe {
    double f0;
    double slope;        // partial rolloff exponent
    double am_rate;      // Hz; 0 disables amplitude modulation
    double am_depth;
    double noise;        // breath/hiss fraction
    double vib_cents;    // vibrato extent
    double vib_rate;     // Hz
};

VoiceRecipe voice_recipe(const std::string& cls) {
    int idx = -1;
    double f0 = 0.0;
    const int n = static_cast<int>(std::size(kAnimalVoices));
    for (int i = 0; i < n; ++i) {
        if (cls == kAnimalVoices[i].name) {
            idx = i;
            f0 = kAnimalVoices[i].f0;
            break;
        }
    }
    if (idx < 0) {
        // unknown class: derive a stable voice from the name
        const uint64_t h = sub_seed(0x414e494d, cls);
        idx = static_cast<int>(h % 97);
        f0 = 150.0 * std::pow(2.0, static_cast<double>(h % 4096) / 4096.0 * 4.0);  // [150, 2400)
    }
    VoiceRecipe r;
    r.f0 = f0;
    r.slope = -1.8 + 1.4 * static_cast<double>((idx * 7) % 24) / 23.0;   // [-1.8, -0.4]
    r.am_rate = static_cast<double>((idx * 5) % 13);                     // 0..12 Hz
    r.am_depth = r.am_rate > 0.0 ? 0.45 : 0.0;
    r.noise = 0.04 + 0.30 * static_cast<double>((idx * 11) % 24) / 23.0;
    r.vib_cents = static_cast<double>(idx % 3) * 30.0;
    r.vib_rate = 4.0 + static_cast<double>(idx % 5);
    return r;
}

void check_range(double v, double lo, double hi, const char* what) {
    if (!(v >= lo && v <= hi))
        throw std::invalid_argument(std::string("synth: ") + what + " out of range");
}

}  // namespace

AudioClip synth(SynthKind kind, const SynthParams& p, uint64_t seed) {
    check_range(p.duration, 0.2, 5.0, "duration");
    check_range(p.amplitude, 1.0 / 256.0, 1.0, "amplitude");
    if (p.partials < 1 || p.partials > 16) throw std::invalid_argument("synth: partials out of range");

    const int sr = kSampleRate;
    const size_t n = static_cast<size_t>(std::llround(p.duration * sr));
    Rng rng(seed);
    AudioClip clip;
    clip.sample_rate = sr;
    clip.samples.assign(n, 0.0);
    clip.has_truth = true;
    auto& s = clip.samples;

    switch (kind) {
        case SynthKind::harmonic_tone: {
            check_range(p.f0, 30.0, 4000.0, "f0");
            for (int k = 1; k <= p.partials; ++k) {
                const double fk = p.f0 * k;
                if (fk >= 0.45 * sr) break;  // keep the stack band-limited
                const double amp = 1.0 / k;
                const double phase = rng.uniform(0.0, 2.0 * kPi);
                for (size_t i = 0; i < n; ++i)
                    s[i] += amp * std::sin(2.0 * kPi * fk * static_cast<double>(i) / sr + phase);
            }
            clip.truth_f0 = p.f0;
            break;
        }
        case SynthKind::chirp: {
            check_range(p.f0, 30.0, 4000.0, "f0");
            const double f1 = p.f1 > 0.0 ? p.f1 : p.f0;
            check_range(f1, 30.0, 4000.0, "f1");
            const double phase0 = rng.uniform(0.0, 2.0 * kPi);
            for (size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / sr;
                const double ph = 2.0 * kPi * (p.f0 * t + 0.5 * (f1 - p.f0) * t * t / p.duration);
                s[i] = std::sin(ph + phase0);
            }
            clip.truth_f0 = 0.5 * (p.f0 + f1);
            break;
        }
        case SynthKind::noise_burst: {
            for (auto& v : s) v = rng.normal();
            clip.truth_f0 = 0.0;
            break;
        }
        case SynthKind::animal_signature: {
            if (p.animal_class.empty()) throw std::invalid_argument("synth: animal_class required");
            const VoiceRecipe r = voice_recipe(p.animal_class);
            const double f0 = r.f0 * (1.0 + 0.03 * rng.uniform(-1.0, 1.0));
            const double vib = r.vib_cents > 0.0 ? std::pow(2.0, r.vib_cents / 1200.0) - 1.0 : 0.0;
            for (int k = 1; k <= 6; ++k) {
                const double fk = f0 * k;
                if (fk >= 0.45 * sr) break;
                const double amp = std::pow(static_cast<double>(k), r.slope);
                const double phase = rng.uniform(0.0, 2.0 * kPi);
                for (size_t i = 0; i < n; ++i) {
                    const double t = static_cast<double>(i) / sr;
                    // vibrato enters through the phase so frequency wobbles smoothly
                    const double ph = 2.0 * kPi * fk *
                        (t - vib * std::cos(2.0 * kPi * r.vib_rate * t) / (2.0 * kPi * r.vib_rate));
                    s[i] += amp * std::sin(ph + phase);
                }
            }
            if (r.am_rate > 0.0) {
                for (size_t i = 0; i < n; ++i) {
                    const double t = static_cast<double>(i) / sr;
                    s[i] *= 1.0 - r.am_depth * 0.5 * (1.0 + std::sin(2.0 * kPi * r.am_rate * t));
                }
            }
            double peak = 0.0;
            for (double v : s) peak = std::max(peak, std::abs(v));
            for (auto& v : s) v += r.noise * peak * 0.25 * rng.normal();
            clip.truth_f0 = f0;
            clip.truth_class = p.animal_class;
            break;
        }
    }

    normalize_peak(s, p.amplitude);
    apply_fade(s, sr);
    quantize_clip(clip);
    return clip;
}

double estimate_pitch(const AudioClip& clip) {
    const int sr = clip.sample_rate;
    if (sr <= 0) throw std::invalid_argument("estimate_pitch: bad sample rate");
    if (clip.samples.size() < static_cast<size_t>(sr) / 5)
        throw std::invalid_argument("estimate_pitch: clip shorter than 0.2 s");

    const auto& x = clip.samples;
    const int tau_min = std::max(2, sr / 4000);
    const int tau_max = sr / 30;
    const int W = (1024 * sr) / 16000;
    const int frame_len = W + tau_max + 2;
    const int hop = (160 * sr) / 16000;
    if (static_cast<int>(x.size()) < frame_len)
        throw std::invalid_argument("estimate_pitch: clip shorter than one analysis frame");

    double clip_sq = 0.0;
    for (double v : x) clip_sq += v * v;
    const double clip_rms = std::sqrt(clip_sq / static_cast<double>(x.size()));
    constexpr double kThreshold = 0.15;

    const size_t fft_n = next_pow2(static_cast<size_t>(frame_len));
    std::vector<std::complex<double>> fa(fft_n), ff(fft_n);
    std::vector<double> prefix(static_cast<size_t>(frame_len) + 1);
    std::vector<double> d(static_cast<size_t>(tau_max) + 1);
    std::vector<double> cmnd(static_cast<size_t>(tau_max) + 1);

    // refinement spectrum: Hann-windowed, heavily zero-padded FFT whose
    // interpolated peak localizes the fundamental far below one bin
    const size_t spec_n = next_pow2(static_cast<size_t>(W)) * 8;
    std::vector<std::complex<double>> spec(spec_n);
    std::vector<double> hann(static_cast<size_t>(W));
    for (int i = 0; i < W; ++i)
        hann[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (W - 1)));

    std::vector<double> f0s;
    for (size_t t = 0; t + static_cast<size_t>(frame_len) <= x.size(); t += static_cast<size_t>(hop)) {
        const double* f = x.data() + t;
        double fsq = 0.0;
        for (int j = 0; j < W; ++j) fsq += f[j] * f[j];
        const double rms = std::sqrt(fsq / W);
        if (rms <= 0.1 * clip_rms) continue;

        // difference function via FFT correlation:
        //   d(tau) = P(0) + P(tau) - 2 * sum_j f[j] f[j+tau]
        for (int j = 0; j < frame_len; ++j) prefix[static_cast<size_t>(j) + 1] = prefix[static_cast<size_t>(j)] + f[j] * f[j];
        std::fill(fa.begin(), fa.end(), std::complex<double>(0.0, 0.0));
        std::fill(ff.begin(), ff.end(), std::complex<double>(0.0, 0.0));
        for (int j = 0; j < W; ++j) fa[static_cast<size_t>(j)] = f[j];
        for (int j = 0; j < frame_len; ++j) ff[static_cast<size_t>(j)] = f[j];
        fft_inplace(fa, false);
        fft_inplace(ff, false);
        for (size_t i = 0; i < fft_n; ++i) fa[i] = std::conj(fa[i]) * ff[i];
        fft_inplace(fa, true);

        const double p0 = prefix[static_cast<size_t>(W)];
        double running = 0.0;
        cmnd[0] = 1.0;
        for (int tau = 1; tau <= tau_max; ++tau) {
            const double ptau = prefix[static_cast<size_t>(tau + W)] - prefix[static_cast<size_t>(tau)];
            d[static_cast<size_t>(tau)] = std::max(0.0, p0 + ptau - 2.0 * fa[static_cast<size_t>(tau)].real());
            running += d[static_cast<size_t>(tau)];
            cmnd[static_cast<size_t>(tau)] = running > 0.0 ? d[static_cast<size_t>(tau)] * tau / running : 1.0;
        }

        // absolute threshold: first dip under 0.15, pursued to its local min
        int tau = -1;
        for (int c = tau_min; c <= tau_max; ++c) {
            if (cmnd[static_cast<size_t>(c)] < kThreshold) {
                tau = c;
                while (tau + 1 <= tau_max && cmnd[static_cast<size_t>(tau + 1)] < cmnd[static_cast<size_t>(tau)]) ++tau;
                break;
            }
        }
        if (tau < 0) continue;  // unvoiced frame

        // refine on the spectrum: the CMND lag brackets the fundamental, the
        // interpolated spectral peak pins it down
        const double f_coarse = static_cast<double>(sr) / tau;
        std::fill(spec.begin(), spec.end(), std::complex<double>(0.0, 0.0));
        for (int j = 0; j < W; ++j) spec[static_cast<size_t>(j)] = f[j] * hann[static_cast<size_t>(j)];
        fft_inplace(spec, false);
        const auto bin_of = [&](double hz) {
            return hz * static_cast<double>(spec_n) / static_cast<double>(sr);
        };
        const int klo = std::max(1, static_cast<int>(bin_of(0.8 * f_coarse)));
        const int khi = std::min(static_cast<int>(spec_n / 2) - 1,
                                 static_cast<int>(bin_of(1.25 * f_coarse)) + 1);
        int kbest = klo;
        double vbest = -1.0;
        for (int k = klo; k <= khi; ++k) {
            const double m = std::abs(spec[static_cast<size_t>(k)]);
            if (m > vbest) {
                vbest = m;
                kbest = k;
            }
        }
        const double lm = std::log(std::abs(spec[static_cast<size_t>(kbest - 1)]) + 1e-300);
        const double cm = std::log(std::abs(spec[static_cast<size_t>(kbest)]) + 1e-300);
        const double rm = std::log(std::abs(spec[static_cast<size_t>(kbest + 1)]) + 1e-300);
        const double denom = lm - 2.0 * cm + rm;
        double delta = 0.0;
        if (denom < 0.0) delta = std::clamp(0.5 * (lm - rm) / denom, -0.5, 0.5);
        f0s.push_back((static_cast<double>(kbest) + delta) * static_cast<double>(sr) /
                      static_cast<double>(spec_n));
    }

    if (f0s.empty()) throw UnvoicedError("estimate_pitch: no voiced frames");
    double mean = 0.0;
    for (double v : f0s) mean += v;
    return mean / static_cast<double>(f0s.size());
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

Spectrogram logmel(const AudioClip& clip, int bins, double window_s, double hop_s) {
    const int sr = clip.sample_rate;
    if (sr <= 0) throw std::invalid_argument("logmel: bad sample rate");
    if (bins < 1) throw std::invalid_argument("logmel: bins must be positive");
    const int win = static_cast<int>(std::llround(window_s * sr));
    const int hop = static_cast<int>(std::llround(hop_s * sr));
    if (win < 2 || hop < 1) throw std::invalid_argument("logmel: window or hop too small");
    if (clip.samples.size() < static_cast<size_t>(win))
        throw std::invalid_argument("logmel: clip shorter than one window");

    const size_t fft_n = next_pow2(static_cast<size_t>(win));
    const size_t half = fft_n / 2 + 1;

    std::vector<double> hann(static_cast<size_t>(win));
    for (int i = 0; i < win; ++i)
        hann[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (win - 1)));

    // triangular HTK mel filters over [0, sr/2]
    const double mel_hi = hz_to_mel(sr / 2.0);
    std::vector<double> edges(static_cast<size_t>(bins) + 2);
    for (int b = 0; b < bins + 2; ++b)
        edges[static_cast<size_t>(b)] = mel_to_hz(mel_hi * b / (bins + 1));
    std::vector<std::vector<std::pair<int, double>>> filters(static_cast<size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        const double fl = edges[static_cast<size_t>(b)], fc = edges[static_cast<size_t>(b) + 1],
                     fr = edges[static_cast<size_t>(b) + 2];
        for (size_t k = 0; k < half; ++k) {
            const double fk = static_cast<double>(k) * sr / static_cast<double>(fft_n);
            double w = 0.0;
            if (fk > fl && fk < fc)
                w = (fk - fl) / (fc - fl);
            else if (fk >= fc && fk < fr)
                w = (fr - fk) / (fr - fc);
            if (w > 0.0) filters[static_cast<size_t>(b)].emplace_back(static_cast<int>(k), w);
        }
    }

    const int64_t frames = static_cast<int64_t>((clip.samples.size() - static_cast<size_t>(win)) / static_cast<size_t>(hop)) + 1;
    Spectrogram spec;
    spec.frames = frames;
    spec.bins = bins;
    spec.hop_seconds = static_cast<double>(hop) / sr;
    spec.data.assign(static_cast<size_t>(frames * bins), 0.0);

    std::vector<std::complex<double>> buf(fft_n);
    std::vector<double> mag(half);
    for (int64_t fidx = 0; fidx < frames; ++fidx) {
        const double* src = clip.samples.data() + fidx * hop;
        std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
        for (int i = 0; i < win; ++i) buf[static_cast<size_t>(i)] = src[i] * hann[static_cast<size_t>(i)];
        fft_inplace(buf, false);
        for (size_t k = 0; k < half; ++k) mag[k] = std::abs(buf[k]);
        for (int b = 0; b < bins; ++b) {
            double e = 0.0;
            for (const auto& [k, w] : filters[static_cast<size_t>(b)]) e += w * mag[static_cast<size_t>(k)];
            spec.data[static_cast<size_t>(fidx * bins + b)] = std::log(e + 1e-6);
        }
    }
    return spec;
}

AudioClip resample(const AudioClip& clip, int sr) {
    if (sr <= 0) throw std::invalid_argument("resample: bad target rate");
    if (clip.sample_rate == sr) return clip;
    AudioClip out = clip;
    out.sample_rate = sr;
    const double ratio = static_cast<double>(clip.sample_rate) / sr;
    const size_t n = static_cast<size_t>(static_cast<double>(clip.samples.size()) / ratio);
    out.samples.assign(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const size_t i0 = static_cast<size_t>(pos);
        const size_t i1 = std::min(i0 + 1, clip.samples.size() - 1);
        const double fr = pos - static_cast<double>(i0);
        out.samples[i] = clip.samples[i0] * (1.0 - fr) + clip.samples[i1] * fr;
    }
    return out;
}

// ---- RIFF/WAVE PCM16 mono ----

namespace {

uint32_t rd_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t rd_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void wr_u32(std::ostream& os, uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

void wr_u16(std::ostream& os, uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

}  // namespace

AudioClip read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_wav: cannot open " + path);
    char tag[4];
    is.read(tag, 4);
    if (!is || std::memcmp(tag, "RIFF", 4) != 0)
        throw std::runtime_error("read_wav: malformed header (no RIFF): " + path);
    rd_u32(is);  // chunk size
    is.read(tag, 4);
    if (!is || std::memcmp(tag, "WAVE", 4) != 0)
        throw std::runtime_error("read_wav: malformed header (no WAVE): " + path);

    AudioClip clip;
    bool have_fmt = false;
    while (is.read(tag, 4)) {
        const uint32_t size = rd_u32(is);
        if (!is) throw std::runtime_error("read_wav: truncated chunk header: " + path);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            const uint16_t format = rd_u16(is);
            const uint16_t channels = rd_u16(is);
            const uint32_t rate = rd_u32(is);
            rd_u32(is);  // byte rate
            rd_u16(is);  // block align
            const uint16_t bits = rd_u16(is);
            if (size > 16) is.seekg(size - 16, std::ios::cur);
            if (format != 1) throw std::runtime_error("read_wav: unsupported encoding (want PCM): " + path);
            if (channels != 1) throw std::runtime_error("read_wav: multi-channel input unsupported: " + path);
            if (bits != 16) throw std::runtime_error("read_wav: unsupported bit depth (want 16): " + path);
            clip.sample_rate = static_cast<int>(rate);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw std::runtime_error("read_wav: data before fmt chunk: " + path);
            const size_t n = size / 2;
            clip.samples.resize(n);
            std::vector<char> raw(size);
            is.read(raw.data(), static_cast<std::streamsize>(size));
            if (!is) throw std::runtime_error("read_wav: truncated samples: " + path);
            for (size_t i = 0; i < n; ++i) {
                const int16_t s = static_cast<int16_t>(
                    static_cast<unsigned char>(raw[2 * i]) |
                    (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
                clip.samples[i] = static_cast<double>(s) / 32768.0;
            }
            return clip;
        } else {
            is.seekg(size + (size & 1), std::ios::cur);  // chunks are word-aligned
        }
    }
    throw std::runtime_error("read_wav: no data chunk: " + path);
}

void write_wav(const AudioClip& clip, const std::string& path) {
    if (clip.sample_rate <= 0) throw std::invalid_argument("write_wav: bad sample rate");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_wav: cannot open " + path);
    const uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
    os.write("RIFF", 4);
    wr_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    wr_u32(os, 16);
    wr_u16(os, 1);  // PCM
    wr_u16(os, 1);  // mono
    wr_u32(os, static_cast<uint32_t>(clip.sample_rate));
    wr_u32(os, static_cast<uint32_t>(clip.sample_rate) * 2);
    wr_u16(os, 2);   // block align
    wr_u16(os, 16);  // bits
    os.write("data", 4);
    wr_u32(os, data_bytes);
    for (double v : clip.samples) {
        const long long q = std::clamp(std::llround(std::clamp(v, -1.0, 1.0) * 32768.0), -32768ll, 32767ll);
        wr_u16(os, static_cast<uint16_t>(static_cast<int16_t>(q)));
    }
    if (!os) throw std::runtime_error("write_wav: write failed for " + path);
}

}  // namespace ab::audio
