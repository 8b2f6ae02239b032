#include "audiobert.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "audiobert/checkpoint.hpp"
#include "audiobert/config.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace ab;

struct ab_config {
    cfg::RunConfig cfg;
};

namespace {

thread_local std::string g_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

// usage errors (bad keys, bad arguments) map to AB_ERR_USAGE; everything else
// that throws is a runtime failure
template <typename Fn>
ab_status guarded(Fn&& fn) {
    try {
        fn();
        return AB_OK;
    } catch (const std::invalid_argument& e) {
        g_error = e.what();
        return AB_ERR_USAGE;
    } catch (const std::exception& e) {
        g_error = e.what();
        return AB_ERR_RUNTIME;
    }
}

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

// ---------------------------------------------------------------------------
// artifact layout

struct Paths {
    fs::path dataset, negatives, clips_meta, manifest, clips_dir;
    fs::path detector, clap, audiobert, index;
    fs::path loss_csv(const std::string& phase) const {
        return detector.parent_path() / (phase + "_loss.csv");
    }
};

Paths paths_of(const cfg::RunConfig& c) {
    const fs::path data(c.data_dir), ckpt(c.checkpoint_dir);
    return {data / "dataset.jsonl", data / "negatives.jsonl", data / "clips_meta.jsonl",
            data / "manifest.json", data / "clips",
            ckpt / "detector.ck",   ckpt / "clap.ck",         ckpt / "audiobert.ck",
            ckpt / "index.abix"};
}

void need_artifact(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p))
        throw std::runtime_error("missing artifact " + p.string() + "; produce it with `ab " +
                                 producer + "`");
}

void write_text_atomic(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp.string());
        os << text;
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::string loss_rows(const std::string& phase, const std::vector<double>& losses) {
    std::ostringstream os;
    os.precision(17);
    for (size_t i = 0; i < losses.size(); ++i)
        os << phase << "," << i + 1 << "," << losses[i] << "\n";
    return os.str();
}

std::string loss_csv_text(const std::string& phase, const std::vector<double>& losses) {
    return "phase,epoch,loss\n" + loss_rows(phase, losses);
}

// ---------------------------------------------------------------------------
// artifact loading

bench::Dataset load_dataset(const Paths& p) {
    need_artifact(p.dataset, "gen-data");
    need_artifact(p.negatives, "gen-data");
    bench::Dataset ds;
    ds.examples = bench::read_examples(p.dataset.string());
    ds.negatives = bench::read_negatives(p.negatives.string());
    return ds;
}

std::vector<std::pair<bench::ClipMeta, audio::AudioClip>> load_clips(const Paths& p) {
    need_artifact(p.clips_meta, "gen-data");
    std::vector<std::pair<bench::ClipMeta, audio::AudioClip>> out;
    for (auto& meta : bench::read_clips_meta(p.clips_meta.string())) {
        const fs::path wav = p.clips_dir / (meta.id + ".wav");
        need_artifact(wav, "gen-data");
        audio::AudioClip clip = audio::read_wav(wav.string());
        clip.id = meta.id;
        out.emplace_back(std::move(meta), std::move(clip));
    }
    return out;
}

pipe::ClipMap load_clip_map(const Paths& p) {
    pipe::ClipMap m;
    for (auto& [meta, clip] : load_clips(p)) m.emplace(meta.id, std::move(clip));
    return m;
}

// ---------------------------------------------------------------------------
// commands

std::string cmd_gen_data(const cfg::RunConfig& c) {
    const auto ds = bench::generate(cfg::gen_options(c));
    bench::write_dataset(ds, c.data_dir);
    return bench::manifest_json(ds);
}

std::string cmd_train_detector(const cfg::RunConfig& c) {
    const Paths p = paths_of(c);
    const auto ds = load_dataset(p);
    const auto result =
        pipe::train_detector(pipe::detector_items(ds, bench::Split::train), cfg::detector_options(c));
    fs::create_directories(c.checkpoint_dir);
    result.detector.save(p.detector.string());
    write_text_atomic(p.loss_csv("detector"), loss_csv_text("detector", result.epoch_loss));
    const auto dev = pipe::score_detector(result.detector, pipe::detector_items(ds, bench::Split::dev));

    ordered_json j;
    j["phase"] = "detector";
    j["epochs"] = result.epoch_loss.size();
    j["final_loss"] = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
    j["dev"] = {{"token_f1", dev.token_f1}, {"span_f1", dev.span_f1}};
    j["checkpoint"] = p.detector.string();
    return j.dump(2);
}

std::string cmd_train_clap(const cfg::RunConfig& c) {
    const Paths p = paths_of(c);
    std::vector<clap::ClapPair> pairs;
    for (auto& [meta, clip] : load_clips(p)) pairs.push_back({std::move(clip), meta.caption});
    const auto result = clap::train_clap(pairs, cfg::clap_options(c));
    fs::create_directories(c.checkpoint_dir);
    result.model.save(p.clap.string());
    write_text_atomic(p.loss_csv("clap"), loss_csv_text("clap", result.epoch_loss));

    ordered_json j;
    j["phase"] = "clap";
    j["epochs"] = result.epoch_loss.size();
    j["final_loss"] = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
    j["pairs"] = pairs.size();
    j["checkpoint"] = p.clap.string();
    return j.dump(2);
}

std::string cmd_build_index(const cfg::RunConfig& c) {
    const Paths p = paths_of(c);
    need_artifact(p.clap, "train clap");
    const auto clap_model = clap::DualEncoder::load(p.clap.string());
    const auto index = pipe::build_index(clap_model, load_clip_map(p));
    fs::create_directories(c.checkpoint_dir);
    index.save(p.index.string());

    ordered_json j;
    j["entries"] = index.count();
    j["dim"] = index.dim();
    j["index"] = p.index.string();
    return j.dump(2);
}

std::string cmd_train_audiobert(const cfg::RunConfig& c) {
    const Paths p = paths_of(c);
    need_artifact(p.clap, "train clap");
    need_artifact(p.index, "build-index");
    const auto ds = load_dataset(p);
    const auto clips = load_clip_map(p);
    const auto clap_model = clap::DualEncoder::load(p.clap.string());
    const auto index = retr::Index::load(p.index.string());

    auto pre = pipe::pretrain_encoder(ds, cfg::pretrain_options(c));
    pipe::AudioBertModel model(std::move(pre.encoder), std::move(pre.vocab), cfg::tower_config(c),
                               sub_seed(c.seed, "audiobert"));
    const auto train = pipe::filter_split(ds.examples, bench::Split::train);
    const auto result =
        pipe::train_audiobert(model, train, clips, clap_model, index, cfg::audiobert_options(c));

    fs::create_directories(c.checkpoint_dir);
    model.save(p.audiobert.string());
    write_text_atomic(p.loss_csv("audiobert"), "phase,epoch,loss\n" +
                                                   loss_rows("pretrain", pre.epoch_loss) +
                                                   loss_rows("finetune", result.epoch_loss));

    ordered_json j;
    j["phase"] = "audiobert";
    j["pretrain_epochs"] = pre.epoch_loss.size();
    j["pretrain_final_loss"] = pre.epoch_loss.empty() ? 0.0 : pre.epoch_loss.back();
    j["epochs"] = result.epoch_loss.size();
    j["final_loss"] = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
    j["train_examples"] = train.size();
    j["base_fingerprint"] = result.base_fingerprint;
    j["checkpoint"] = p.audiobert.string();
    return j.dump(2);
}

struct LoadedStack {
    pipe::AudioBertModel model;
    pipe::Detector detector;
    clap::DualEncoder clap_model;
    retr::Index index;
    pipe::ClipMap clips;
};

LoadedStack load_stack(const cfg::RunConfig& c) {
    const Paths p = paths_of(c);
    need_artifact(p.detector, "train detector");
    need_artifact(p.clap, "train clap");
    need_artifact(p.index, "build-index");
    need_artifact(p.audiobert, "train audiobert");
    return {pipe::AudioBertModel::load(p.audiobert.string()),
            pipe::Detector::load(p.detector.string()), clap::DualEncoder::load(p.clap.string()),
            retr::Index::load(p.index.string()), load_clip_map(p)};
}

std::string cmd_eval(const cfg::RunConfig& c, const std::string& split) {
    if (split != "train" && split != "dev" && split != "test" && split != "gen")
        throw std::invalid_argument("eval: unknown split '" + split +
                                    "'; valid splits: train, dev, test, gen");
    const Paths p = paths_of(c);
    auto stack = load_stack(c);
    const auto examples =
        pipe::filter_split(load_dataset(p).examples, bench::split_from_string(split));

    pipe::EvalOptions opt;
    opt.split = split;
    opt.seed = c.seed;
    opt.model_name = "audiobert";
    const auto full = pipe::evaluate(stack.model, stack.detector, stack.clap_model, stack.index,
                                     examples, stack.clips, opt);
    opt.model_name = "base";
    opt.force_base = true;
    const auto base = pipe::evaluate(stack.model, stack.detector, stack.clap_model, stack.index,
                                     examples, stack.clips, opt);

    ordered_json j;
    j["split"] = split;
    j["audiobert"] = ordered_json::parse(pipe::metrics_json(full));
    j["baseline"] = ordered_json::parse(pipe::metrics_json(base));
    return j.dump(2);
}

std::string span_line(const pipe::Span& s) {
    std::ostringstream os;
    os.precision(3);
    os << "  [" << s.start << "," << s.end << ") '" << s.text << "' conf=" << std::fixed
       << s.confidence;
    return os.str();
}

std::string cmd_query(const cfg::RunConfig& c, const std::string& prompt, bool emit_json) {
    auto stack = load_stack(c);
    const auto trace = pipe::infer(stack.model, stack.detector, stack.clap_model, stack.index,
                                   stack.clips, prompt);
    if (emit_json) {
        ordered_json j;
        j["prompt"] = prompt;
        j["gating"] = trace.gated_on ? "on" : "off";
        ordered_json spans = ordered_json::array();
        for (const auto& s : trace.spans)
            spans.push_back({{"start", s.start},
                             {"end", s.end},
                             {"text", s.text},
                             {"confidence", s.confidence}});
        j["spans"] = std::move(spans);
        j["retrieved"] = trace.retrieved;
        j["answer"] = trace.answer;
        return j.dump(2);
    }
    std::ostringstream os;
    os << "prompt: " << prompt << "\n";
    os << "gating: " << (trace.gated_on ? "on" : "off") << "\n";
    os << "spans:" << (trace.spans.empty() ? " none" : "") << "\n";
    for (const auto& s : trace.spans) os << span_line(s) << "\n";
    os << "retrieved:" << (trace.retrieved.empty() ? " none" : "");
    for (const auto& id : trace.retrieved) os << " " << id;
    os << "\n";
    os << "answer: " << trace.answer << "\n";
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// the C surface

extern "C" {

const char* ab_version(void) { return "0.1.0"; }

const char* ab_last_error(void) { return g_error.c_str(); }

ab_status ab_config_default(ab_config** out) {
    return guarded([&] {
        require(out != nullptr, "ab_config_default: out is null");
        *out = new ab_config{};
    });
}

ab_status ab_config_load(const char* path, ab_config** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "ab_config_load: null argument");
        auto c = std::make_unique<ab_config>();
        c->cfg = cfg::load(path);
        *out = c.release();
    });
}

ab_status ab_config_set(ab_config* c, const char* assignment) {
    return guarded([&] {
        require(c != nullptr && assignment != nullptr, "ab_config_set: null argument");
        cfg::apply_override(c->cfg, assignment);
    });
}

ab_status ab_config_apply_env(ab_config* c) {
    return guarded([&] {
        require(c != nullptr, "ab_config_apply_env: null argument");
        cfg::apply_env(c->cfg);
    });
}

ab_status ab_config_text(const ab_config* c, char** text_out) {
    return guarded([&] {
        require(c != nullptr && text_out != nullptr, "ab_config_text: null argument");
        *text_out = dup_string(cfg::to_text(c->cfg));
    });
}

void ab_config_free(ab_config* c) { delete c; }

ab_status ab_gen_data(const ab_config* c, char** manifest_json_out) {
    return guarded([&] {
        require(c != nullptr && manifest_json_out != nullptr, "ab_gen_data: null argument");
        *manifest_json_out = dup_string(cmd_gen_data(c->cfg));
    });
}

ab_status ab_train(const ab_config* c, const char* phase, char** report_json_out) {
    return guarded([&] {
        require(c != nullptr && phase != nullptr && report_json_out != nullptr,
                "ab_train: null argument");
        const std::string ph = phase;
        std::string report;
        if (ph == "detector")
            report = cmd_train_detector(c->cfg);
        else if (ph == "clap")
            report = cmd_train_clap(c->cfg);
        else if (ph == "audiobert")
            report = cmd_train_audiobert(c->cfg);
        else
            throw std::invalid_argument("ab_train: unknown phase '" + ph +
                                        "'; valid phases: detector, clap, audiobert");
        *report_json_out = dup_string(report);
    });
}

ab_status ab_build_index(const ab_config* c, char** report_json_out) {
    return guarded([&] {
        require(c != nullptr && report_json_out != nullptr, "ab_build_index: null argument");
        *report_json_out = dup_string(cmd_build_index(c->cfg));
    });
}

ab_status ab_eval(const ab_config* c, const char* split, char** metrics_json_out) {
    return guarded([&] {
        require(c != nullptr && split != nullptr && metrics_json_out != nullptr,
                "ab_eval: null argument");
        *metrics_json_out = dup_string(cmd_eval(c->cfg, split));
    });
}

ab_status ab_query(const ab_config* c, const char* prompt, int emit_json, char** out) {
    return guarded([&] {
        require(c != nullptr && prompt != nullptr && out != nullptr, "ab_query: null argument");
        *out = dup_string(cmd_query(c->cfg, prompt, emit_json != 0));
    });
}

void ab_string_free(char* s) { std::free(s); }

}  // extern "C"
