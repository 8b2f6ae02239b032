#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audiobert/audio.hpp"
#include "audiobert/checkpoint.hpp"
#include "audiobert/encoder.hpp"
#include "audiobert/tensor.hpp"
#include "audiobert/textproc.hpp"

namespace ab::clap {

using num::NamedTensor;
using num::Tensor;

// AST-style patch encoder over log-mel spectrograms: non-overlapping
// patch x patch tiles, linear patch embedding, learned positions, a small
// pre-LN transformer, mean pooling. Used twice — as the audio tower of the
// dual encoder and, with fresh weights, as the injection encoder.
struct AudioTowerConfig {
    int layers = 2;
    int d = 64;
    int heads = 4;
    int ffn = 256;
    int mel_bins = 64;
    int patch = 8;          // tile edge, frames x mel bins
    int max_patches = 512;  // position table size; caps clip length
};

class AudioTower {
public:
    AudioTower() = default;
    AudioTower(const AudioTowerConfig& cfg, Rng& rng);

    // [P, patch*patch] leaf, time-major tile order; trailing frames that do
    // not fill a tile are dropped
    Tensor patchify(const audio::Spectrogram& mel) const;

    // pooled features, one row of width d per input patch matrix
    Tensor forward(const std::vector<Tensor>& patches) const;

    void collect_params(const std::string& prefix, std::vector<NamedTensor>& out) const;
    const AudioTowerConfig& config() const { return cfg_; }

private:
    AudioTowerConfig cfg_;
    Tensor patch_w_, patch_b_;  // [d, patch*patch], [d]
    Tensor pos_emb_;            // [max_patches, d]
    enc::TransformerStack stack_;
};

struct ClapConfig {
    int text_layers = 2;
    int text_d = 64;
    int text_heads = 4;
    int text_ffn = 256;
    int max_text_positions = text::kMaxSeqLen;
    AudioTowerConfig audio;
    int embed_dim = 64;  // shared space e
    double tau = 0.07;
    uint64_t seed = 0;
};

struct ClapPair {
    audio::AudioClip clip;
    std::string caption;
};

// Symmetric InfoNCE over cosine similarities: softmax over captions for each
// clip, softmax over clips for each caption, averaged. Inputs are one row per
// pair, rows need not be pre-normalized (cosine is computed internally).
Tensor contrastive_loss(const Tensor& audio_emb, const Tensor& text_emb, double tau);

// Two-tower audio-text embedding model mapping both modalities into a shared
// unit sphere of dim embed_dim.
class DualEncoder {
public:
    DualEncoder(const ClapConfig& cfg, text::Vocabulary vocab);

    // graph-building batch forwards used by training; unit-norm rows
    Tensor text_forward(const std::vector<std::vector<int>>& batch_ids) const;
    Tensor audio_forward(const std::vector<Tensor>& patches) const;

    std::vector<double> embed_text(const std::string& text) const;
    std::vector<double> embed_audio(const audio::AudioClip& clip) const;

    // log-mel features with the tower's configured bin count
    audio::Spectrogram features(const audio::AudioClip& clip) const;
    const AudioTower& tower() const { return tower_; }

    const ClapConfig& config() const { return cfg_; }
    const text::Vocabulary& vocabulary() const { return vocab_; }

    std::vector<NamedTensor> params() const;

    // weights at `path`, vocabulary at `path + ".vocab"`
    void save(const std::string& path) const;
    static DualEncoder load(const std::string& path);

private:
    DualEncoder() = default;

    ClapConfig cfg_;
    text::Vocabulary vocab_;
    Tensor text_tok_emb_, text_pos_emb_;  // [V, d_t], [max_text_positions, d_t]
    enc::TransformerStack text_stack_;
    Tensor text_proj_;   // [e, d_t]
    AudioTower tower_;
    Tensor audio_proj_;  // [e, d_a]
};

struct ClapTrainOptions {
    int epochs = 30;
    int batch = 16;
    double lr = 3e-4;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    uint64_t seed = 0;
    ClapConfig config;  // config.seed is overridden by `seed`
};

struct ClapTrainResult {
    DualEncoder model;
    std::vector<double> epoch_loss;  // mean batch loss per epoch
};

// Builds a vocabulary from the captions, trains both towers jointly with
// AdamW on the contrastive objective, and returns the trained model with its
// loss curve. Deterministic given opt.seed.
ClapTrainResult train_clap(const std::vector<ClapPair>& pairs, const ClapTrainOptions& opt);

}  // namespace ab::clap
