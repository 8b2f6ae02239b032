#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "audiobert/config.hpp"
#include "audiobert/rng.hpp"

using namespace ab;

TEST_CASE("defaults carry the documented training recipes") {
    const cfg::RunConfig c;
    CHECK(c.enc_layers == 4);
    CHECK(c.enc_d == 128);
    CHECK(c.enc_heads == 4);
    CHECK(c.enc_ffn == 512);
    CHECK(c.lora_rank == 64);
    CHECK(c.lora_alpha == 128.0);
    CHECK(c.det_epochs == 5);
    CHECK(c.det_batch == 16);
    CHECK(c.det_lr == 1e-5);
    CHECK(c.ab_epochs == 20);
    CHECK(c.ab_batch == 32);
    CHECK(c.ab_lr == 3e-4);
    CHECK(c.clap_tau == 0.07);
    CHECK(c.seed == 0);
}

TEST_CASE("parse reads sections, comments, and typed values") {
    const std::string text =
        "# full-line comment\n"
        "[run]\n"
        "seed = 12345678901234567890  ; huge seeds fit in 64 bits\n"
        "data_dir = /tmp/ab_data\n"
        "\n"
        "[detector]\n"
        "lr=1e-3\n"
        "epochs = 7\n"
        "[clap]\n"
        "tau = 0.05 # inline comment\n";
    const auto c = cfg::parse(text);
    CHECK(c.seed == 12345678901234567890ULL);
    CHECK(c.data_dir == "/tmp/ab_data");
    CHECK(c.det_lr == 1e-3);
    CHECK(c.det_epochs == 7);
    CHECK(c.clap_tau == 0.05);
    // untouched keys keep their defaults
    CHECK(c.det_batch == 16);
    CHECK(c.checkpoint_dir == "checkpoints");
}

TEST_CASE("parse rejects unknown keys, bad values, and malformed lines") {
    CHECK_THROWS_WITH_AS((void)cfg::parse("[detector]\nlearning_rate = 1\n"),
                         doctest::Contains("detector.learning_rate"), std::invalid_argument);
    CHECK_THROWS_WITH_AS((void)cfg::parse("[nosuch]\nepochs = 1\n"),
                         doctest::Contains("nosuch.epochs"), std::invalid_argument);
    CHECK_THROWS_WITH_AS((void)cfg::parse("[detector]\nepochs = five\n"),
                         doctest::Contains("five"), std::invalid_argument);
    CHECK_THROWS_WITH_AS((void)cfg::parse("[detector]\nepochs = 3x\n"), doctest::Contains("3x"),
                         std::invalid_argument);
    CHECK_THROWS_AS((void)cfg::parse("epochs = 3\n"), std::invalid_argument);  // before any section
    CHECK_THROWS_AS((void)cfg::parse("[detector\nepochs = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)cfg::parse("[detector]\nepochs\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)cfg::parse("[detector]\nepochs =\n"), std::invalid_argument);
}

TEST_CASE("text round-trip preserves every field") {
    cfg::RunConfig c;
    c.seed = 42;
    c.data_dir = "elsewhere";
    c.det_lr = 2.5e-4;
    c.gen_pitch_examples = 123;
    const std::string text = cfg::to_text(c);
    const auto back = cfg::parse(text);
    CHECK(cfg::to_text(back) == text);
    CHECK(back.seed == 42);
    CHECK(back.data_dir == "elsewhere");
    CHECK(back.det_lr == 2.5e-4);
    CHECK(back.gen_pitch_examples == 123);

    // every known key appears in the rendering
    for (const auto& key : cfg::known_keys()) {
        const auto dot = key.find('.');
        CHECK(text.find("\n" + key.substr(dot + 1) + " = ") != std::string::npos);
    }
}

TEST_CASE("overrides and environment variables reach the same bindings") {
    cfg::RunConfig c;
    cfg::apply_override(c, "audiobert.lr=1e-2");
    CHECK(c.ab_lr == 1e-2);
    cfg::apply_override(c, "run.checkpoint_dir = ck");
    CHECK(c.checkpoint_dir == "ck");
    CHECK_THROWS_WITH_AS(cfg::apply_override(c, "audiobert.lr"), doctest::Contains("section.key"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(cfg::apply_override(c, "audiobert.rate=1"),
                         doctest::Contains("audiobert.rate"), std::invalid_argument);

    setenv("AB_DETECTOR_LR", "5e-4", 1);
    setenv("AB_GEN_ANIMAL_EXAMPLES", "99", 1);
    cfg::apply_env(c);
    unsetenv("AB_DETECTOR_LR");
    unsetenv("AB_GEN_ANIMAL_EXAMPLES");
    CHECK(c.det_lr == 5e-4);
    CHECK(c.gen_animal_examples == 99);

    setenv("AB_CLAP_TAU", "not_a_number", 1);
    CHECK_THROWS_AS(cfg::apply_env(c), std::invalid_argument);
    unsetenv("AB_CLAP_TAU");
}

TEST_CASE("load reads a file and reports a missing one") {
    const std::string path = "config_roundtrip.cfg";
    {
        std::ofstream os(path);
        os << "[run]\nseed = 7\n[audiobert]\nepochs = 2\n";
    }
    const auto c = cfg::load(path);
    CHECK(c.seed == 7);
    CHECK(c.ab_epochs == 2);
    std::remove(path.c_str());
    CHECK_THROWS_WITH_AS((void)cfg::load("definitely_missing.cfg"),
                         doctest::Contains("definitely_missing.cfg"), std::invalid_argument);
}

TEST_CASE("derived phase options map fields and split the seed by phase name") {
    cfg::RunConfig c;
    c.seed = 77;
    c.gen_animal_examples = 50;
    c.det_lr = 9e-4;
    c.clap_embed_dim = 48;
    c.tower_mel_bins = 32;
    c.ab_epochs = 4;

    const auto g = cfg::gen_options(c);
    CHECK(g.animal_examples == 50);
    CHECK(g.seed == sub_seed(77, "data"));

    const auto d = cfg::detector_options(c);
    CHECK(d.lr == 9e-4);
    CHECK(d.seed == sub_seed(77, "detector"));
    CHECK(d.config.layers == c.det_layers);

    const auto cl = cfg::clap_options(c);
    CHECK(cl.config.embed_dim == 48);
    CHECK(cl.config.audio.mel_bins == 32);
    CHECK(cl.seed == sub_seed(77, "clap"));

    const auto p = cfg::pretrain_options(c);
    CHECK(p.config.layers == 4);
    CHECK(p.config.lora_rank == 64);

    const auto a = cfg::audiobert_options(c);
    CHECK(a.epochs == 4);
    // pretraining and fine-tuning are one phase; they share the phase seed and
    // diverge through their internal stream names
    CHECK(a.seed == sub_seed(77, "audiobert"));
    CHECK(p.seed == a.seed);

    // distinct phases never share a stream
    CHECK(g.seed != d.seed);
    CHECK(d.seed != cl.seed);
    CHECK(cl.seed != a.seed);
    CHECK(g.seed != a.seed);
}
