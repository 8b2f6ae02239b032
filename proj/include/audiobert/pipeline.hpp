#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "audiobert/audio.hpp"
#include "audiobert/benchgen.hpp"
#include "audiobert/clap.hpp"
#include "audiobert/encoder.hpp"
#include "audiobert/retrieval.hpp"
#include "audiobert/textproc.hpp"

namespace ab::pipe {

// ---------------------------------------------------------------------------
// auditory-knowledge span detection

// per-token positive probability above this marks a span token
constexpr double kSpanThreshold = 0.5;

struct Span {
    int start = 0;  // token indices into the tokenized prompt, [start, end)
    int end = 0;
    double confidence = 0.0;  // mean positive probability over the span
    std::string text;         // surface slice of the prompt
};

// Token-classification model over its own encoder: tags each word token as
// inside or outside an auditory span; maximal contiguous positive runs become
// spans. Special tokens and [MASK] never join a span.
class Detector {
public:
    Detector(enc::EncoderConfig cfg, text::Vocabulary vocab);

    std::vector<Span> detect(const std::string& prompt) const;
    std::vector<Span> detect(const text::TokenizedPrompt& prompt) const;

    const enc::Encoder& encoder() const { return encoder_; }
    const text::Vocabulary& vocabulary() const { return vocab_; }
    std::vector<num::NamedTensor> params() const;

    // weights at `path`, vocabulary at `path + ".vocab"`
    void save(const std::string& path) const;
    static Detector load(const std::string& path);

private:
    text::Vocabulary vocab_;
    enc::Encoder encoder_;
};

// one detector training / scoring item; negatives carry no spans
struct TaggedPrompt {
    std::string prompt;
    std::vector<bench::CharSpan> spans;
};

// span-labeled prompts of one split: benchmark examples plus negatives
std::vector<TaggedPrompt> detector_items(const bench::Dataset& ds, bench::Split split);

// benchmark examples of one split, in dataset order
std::vector<bench::BenchExample> filter_split(const std::vector<bench::BenchExample>& examples,
                                              bench::Split split);

struct DetectorTrainOptions {
    int epochs = 5;
    int batch = 16;
    double lr = 1e-5;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    uint64_t seed = 0;
    enc::EncoderConfig config = {.layers = 2, .d = 64, .heads = 4, .ffn = 256,
                                 .max_positions = text::kMaxSeqLen};
};

struct DetectorTrainResult {
    Detector detector;
    std::vector<double> epoch_loss;
};

// builds a vocabulary over the prompts and trains the tag head with
// cross-entropy over word tokens; deterministic given opt.seed
DetectorTrainResult train_detector(const std::vector<TaggedPrompt>& items,
                                   const DetectorTrainOptions& opt);

struct DetectorScores {
    double token_f1 = 0.0;  // micro F1 over word-token in/out decisions
    double span_f1 = 0.0;   // micro F1 over exact [start, end) matches
};

DetectorScores score_detector(const Detector& det, const std::vector<TaggedPrompt>& items);

// ---------------------------------------------------------------------------
// retrieval and injection

// top-k clip ids for a span text, by cosine in the shared embedding space
std::vector<std::string> retrieve_for_span(const std::string& span_text,
                                           const clap::DualEncoder& clap, const retr::Index& index,
                                           int k = 1);

// out[span.start] += proj_w . audio_vec + proj_b, all other rows untouched;
// applied at the input-embedding layer, before the transformer stack
num::Tensor inject(const num::Tensor& token_embeddings, const Span& span,
                   const num::Tensor& audio_vec, const num::Tensor& proj_w,
                   const num::Tensor& proj_b);

// ---------------------------------------------------------------------------
// base-encoder pretraining

struct PretrainOptions {
    int sentences = 3000;
    int epochs = 8;
    int batch = 32;
    double lr = 1e-3;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    double mask_rate = 0.15;
    uint64_t seed = 0;
    enc::EncoderConfig config = {.layers = 2, .d = 64, .heads = 4, .ffn = 256,
                                 .max_positions = text::kMaxSeqLen, .lora_rank = 8,
                                 .lora_alpha = 16.0};
};

// Plain-text sentences over the benchmark's templates and word lists with the
// pairings shuffled at random: every word the tasks need, none of the
// knowledge. A model pretrained on it answers the benchmark at chance level,
// so any later gain is attributable to injection and the adapters.
std::vector<std::string> pretrain_corpus(const bench::Dataset& ds, int sentences, uint64_t seed);

struct PretrainResult {
    enc::Encoder encoder;
    text::Vocabulary vocab;
    std::vector<double> epoch_loss;
};

// masked-language-model pretraining from scratch over pretrain_corpus plus a
// vocabulary covering every prompt, answer, and negative in the dataset;
// adapters stay disabled and untouched
PretrainResult pretrain_encoder(const bench::Dataset& ds, const PretrainOptions& opt);

// ---------------------------------------------------------------------------
// the assembled model

// Pretrained language model plus the auditory attachments: LoRA adapters on
// the attention projections, a trainable spectrogram-patch encoder over
// retrieved clips, and a projection from its features into the embedding
// space. With adapters off and nothing injected the model IS the base
// encoder, bit for bit.
class AudioBertModel {
public:
    AudioBertModel(enc::Encoder base, text::Vocabulary vocab,
                   const clap::AudioTowerConfig& tower_cfg, uint64_t seed);

    const enc::Encoder& base() const { return base_; }
    enc::Encoder& base() { return base_; }
    const clap::AudioTower& tower() const { return tower_; }
    const text::Vocabulary& vocabulary() const { return vocab_; }
    const num::Tensor& proj_w() const { return proj_w_; }
    const num::Tensor& proj_b() const { return proj_b_; }

    std::vector<num::NamedTensor> params() const;            // everything
    std::vector<num::NamedTensor> trainable_params() const;  // adapters + tower + projection
    std::vector<num::NamedTensor> frozen_params() const;     // the base encoder

    // log-mel features with the tower's configured bin count
    audio::Spectrogram features(const audio::AudioClip& clip) const;

    // MLM logits at the [MASK] position; injections pair a token row with the
    // clip whose projected embedding lands there
    std::vector<double> mask_logits(const text::TokenizedPrompt& prompt,
                                    const std::vector<std::pair<int, const audio::AudioClip*>>& injections,
                                    bool adapters);

    // weights at `path`, vocabulary at `path + ".vocab"`
    void save(const std::string& path) const;
    static AudioBertModel load(const std::string& path);

private:
    text::Vocabulary vocab_;
    enc::Encoder base_;
    clap::AudioTower tower_;
    num::Tensor proj_w_;  // [d, tower d]
    num::Tensor proj_b_;  // [d], zero-initialized
};

// ---------------------------------------------------------------------------
// training and inference

using ClipMap = std::map<std::string, audio::AudioClip>;

ClipMap clip_map(const std::vector<bench::ClipRecord>& clips);

// (clip, caption) pairs for contrastive training
std::vector<clap::ClapPair> clap_pairs(const std::vector<bench::ClipRecord>& clips);

// embeds every clip with the dual encoder and freezes the result
retr::Index build_index(const clap::DualEncoder& clap, const ClipMap& clips);

struct AudioBertTrainOptions {
    int epochs = 20;
    int batch = 32;
    double lr = 3e-4;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    uint64_t seed = 0;
};

struct AudioBertTrainResult {
    std::vector<double> epoch_loss;
    uint64_t base_fingerprint = 0;  // frozen-set digest, audited before vs after
};

// Finetunes adapters, injection tower, and projection on the masked-answer
// objective with gold spans and top-1 retrieval; the base encoder, the dual
// encoder, and the retrieval index never move (fingerprint-audited).
AudioBertTrainResult train_audiobert(AudioBertModel& model,
                                     const std::vector<bench::BenchExample>& examples,
                                     const ClipMap& clips, const clap::DualEncoder& clap,
                                     const retr::Index& index, const AudioBertTrainOptions& opt);

struct InferTrace {
    bool gated_on = false;          // any span detected?
    std::vector<Span> spans;        // detected spans, in token order
    std::vector<std::string> retrieved;  // top-1 clip id per span
    std::string answer;
};

// Detector-gated inference: no span means adapters off and no injection —
// the unmodified base model answers; otherwise each span's retrieved clip is
// injected and the adapters are active. `candidates` restricts the argmax to
// the given words (empty = whole vocabulary).
InferTrace infer(AudioBertModel& model, const Detector& det, const clap::DualEncoder& clap,
                 const retr::Index& index, const ClipMap& clips, const std::string& prompt,
                 const std::vector<std::string>& candidates = {});

// ---------------------------------------------------------------------------
// evaluation

struct TaskScore {
    double accuracy = 0.0;
    int64_t n = 0;
};

struct MetricsReport {
    std::string model;
    std::string dataset;
    std::string split;
    uint64_t seed = 0;
    TaskScore animal;
    TaskScore pitch;                           // accuracy restricted to {higher, lower}
    double pitch_accuracy_unrestricted = 0.0;  // secondary: argmax over the whole vocabulary
    DetectorScores detector;
    int64_t prompts = 0;
    int64_t gated_on = 0;
    int64_t gated_off = 0;
    int64_t spans_detected = 0;
    bool forced_base = false;
};

struct EvalOptions {
    std::string model_name = "audiobert";
    std::string dataset_name = "auditorybench";
    std::string split = "test";
    uint64_t seed = 0;
    bool force_base = false;  // gating forced off everywhere: the baseline run
};

MetricsReport evaluate(AudioBertModel& model, const Detector& det, const clap::DualEncoder& clap,
                       const retr::Index& index, const std::vector<bench::BenchExample>& examples,
                       const ClipMap& clips, const EvalOptions& opt);

// the report as one pretty-printed JSON document
std::string metrics_json(const MetricsReport& r);

}  // namespace ab::pipe
