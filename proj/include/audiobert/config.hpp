#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audiobert/benchgen.hpp"
#include "audiobert/clap.hpp"
#include "audiobert/pipeline.hpp"

namespace ab::cfg {

// Every tunable of a full run, grouped by [section]. One seed feeds the whole
// pipeline; phases derive their own streams from it by name.
struct RunConfig {
    // [run]
    uint64_t seed = 0;
    std::string data_dir = "data";
    std::string checkpoint_dir = "checkpoints";

    // [gen]
    int gen_animal_examples = 1200;
    int gen_animal_classes = 24;
    int gen_animal_gen = 120;
    int gen_pitch_examples = 2000;
    int gen_pitch_sources = 20;
    int gen_pitch_gen = 200;
    int gen_negatives = 400;

    // [encoder] — the base masked LM
    int enc_layers = 4;
    int enc_d = 128;
    int enc_heads = 4;
    int enc_ffn = 512;
    int lora_rank = 64;
    double lora_alpha = 128.0;

    // [tower] — AST-style audio encoder, used by clap and by injection
    int tower_layers = 2;
    int tower_d = 64;
    int tower_heads = 4;
    int tower_ffn = 256;
    int tower_mel_bins = 64;
    int tower_patch = 8;

    // [pretrain]
    int pretrain_sentences = 3000;
    int pretrain_epochs = 8;
    int pretrain_batch = 32;
    double pretrain_lr = 1e-3;
    double pretrain_mask_rate = 0.15;

    // [detector]
    int det_layers = 2;
    int det_d = 64;
    int det_heads = 4;
    int det_ffn = 256;
    int det_epochs = 5;
    int det_batch = 16;
    double det_lr = 1e-5;

    // [clap]
    int clap_text_layers = 2;
    int clap_text_d = 64;
    int clap_text_heads = 4;
    int clap_text_ffn = 256;
    int clap_embed_dim = 64;
    double clap_tau = 0.07;
    int clap_epochs = 30;
    int clap_batch = 16;
    double clap_lr = 3e-4;

    // [audiobert]
    int ab_epochs = 20;
    int ab_batch = 32;
    double ab_lr = 3e-4;
};

// "section.key" names of every binding, in declaration order
const std::vector<std::string>& known_keys();

// section.key=value text: [section] headers, '#'/';' comments, blank lines.
// Unknown keys and malformed values are errors naming the offender.
RunConfig parse(const std::string& text);
RunConfig load(const std::string& path);  // missing file is an error

// one "section.key=value" assignment, e.g. a --set flag
void apply_override(RunConfig& c, const std::string& assignment);

// environment overrides: AB_<SECTION>_<KEY>, e.g. AB_DETECTOR_LR=1e-3
void apply_env(RunConfig& c);

// the config rendered back as parseable text (defaults documented by example)
std::string to_text(const RunConfig& c);

// phase options derived from the config; every phase seed is a named
// sub-stream of the run seed
bench::GenOptions gen_options(const RunConfig& c);
clap::AudioTowerConfig tower_config(const RunConfig& c);
pipe::PretrainOptions pretrain_options(const RunConfig& c);
pipe::DetectorTrainOptions detector_options(const RunConfig& c);
clap::ClapTrainOptions clap_options(const RunConfig& c);
pipe::AudioBertTrainOptions audiobert_options(const RunConfig& c);

}  // namespace ab::cfg
