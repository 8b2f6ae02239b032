#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audiobert/audio.hpp"

namespace ab::bench {

enum class Task { animal, pitch };
enum class Split { train, dev, test, gen };

const std::string& to_string(Task t);
const std::string& to_string(Split s);
Task task_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// half-open byte range into the prompt
struct CharSpan {
    int begin = 0;
    int end = 0;
    bool operator==(const CharSpan&) const = default;
};

struct BenchExample {
    std::string id;
    Task task = Task::animal;
    std::string prompt;  // contains exactly one [MASK]
    std::string answer;
    std::vector<CharSpan> spans;          // 1 for animal, 2 for pitch
    std::vector<std::string> audio_refs;  // clip id grounding each span
    Split split = Split::train;
    bool operator==(const BenchExample&) const = default;
};

// non-auditory prompts used as detector negatives and gating probes
struct NegativeExample {
    std::string id;
    std::string prompt;
    Split split = Split::train;
    bool operator==(const NegativeExample&) const = default;
};

struct ClipRecord {
    audio::AudioClip clip;  // id, samples, synthesis truth
    Task task = Task::animal;
    std::string label;      // animal class or pitch source name
    std::string caption;    // audio-text training caption
    double measured_f0 = 0.0;  // estimate_pitch output; 0 for animal clips
};

// clips_meta.jsonl row: everything but the samples
struct ClipMeta {
    std::string id;
    Task task = Task::animal;
    std::string label;
    std::string caption;
    double truth_f0 = 0.0;
    double measured_f0 = 0.0;
    bool operator==(const ClipMeta&) const = default;
};

struct GenBatch {
    std::vector<BenchExample> examples;
    std::vector<ClipRecord> clips;
};

// fixed 24-entry class -> onomatopoeia lexicon ("cat" -> "meow", ...)
const std::vector<std::pair<std::string, std::string>>& animal_lexicon();

// prompt templates per task; index range for the *_prompt_text renderers
constexpr int kAnimalTemplates = 5;
constexpr int kPitchTemplates = 5;

// bare prompt text of one template, [MASK] left in place; lets callers render
// arbitrary word pairings (the language-model pretraining corpus shuffles
// them so no task knowledge leaks out of the templates)
std::string animal_prompt_text(int tmpl, const std::string& onomatopoeia);
std::string pitch_prompt_text(int tmpl, const std::string& x, const std::string& y);

struct PitchSource {
    std::string name;
    double f0_lo = 0.0;  // Hz, sampled uniformly per clip
    double f0_hi = 0.0;
    int partials = 1;
};

// first `count` rows of the built-in 20-source table; fundamentals ascend
// geometrically from 80 Hz to 2.5 kHz
std::vector<PitchSource> default_pitch_sources(int count);

// true iff the relative difference against the smaller pitch exceeds 10%
bool pitch_filter(double p1, double p2);

// which source pairs a generation run may sample; held-out pairs exist only
// in the gen split
enum class PairSet { main, heldout, all };
bool heldout_pair(int a, int b);

// n examples over the first `classes` lexicon entries, counts uniform
// within one; prompts drawn from four paraphrase templates (the fifth is
// reserved for the gen split)
GenBatch gen_animal(int n, int classes, uint64_t seed, bool heldout_templates = false);

// n pitch-comparison pairs; per pair two freshly synthesized clips, labels
// from estimated pitch, orientation alternated so answers stay balanced
GenBatch gen_pitch(int n, const std::vector<PitchSource>& sources, uint64_t seed,
                   PairSet pairs = PairSet::main);

// tags examples train/dev/test at 70/10/20 with largest-remainder rounding
// after a deterministic shuffle
void assign_splits(std::vector<BenchExample>& examples, uint64_t seed);

struct GenOptions {
    int animal_examples = 1200;
    int animal_classes = 24;
    int animal_gen = 120;
    int pitch_examples = 2000;
    int pitch_sources = 20;
    int pitch_gen = 200;
    int negatives = 400;
    uint64_t seed = 0;
};

struct Dataset {
    GenOptions options;
    std::vector<BenchExample> examples;  // main splits plus gen
    std::vector<NegativeExample> negatives;
    std::vector<ClipRecord> clips;
};

Dataset generate(const GenOptions& opt);

// recomputable integer statistics plus the seed; single pretty-printed JSON
// document
std::string manifest_json(const Dataset& ds);

// dataset.jsonl, negatives.jsonl, clips_meta.jsonl, manifest.json, and
// clips/<id>.wav under dir (created if missing)
void write_dataset(const Dataset& ds, const std::string& dir);

std::string examples_jsonl(const std::vector<BenchExample>& examples);
std::vector<BenchExample> read_examples(const std::string& path);
std::vector<NegativeExample> read_negatives(const std::string& path);
std::vector<ClipMeta> read_clips_meta(const std::string& path);

}  // namespace ab::bench
