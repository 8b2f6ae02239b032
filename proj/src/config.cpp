#include "audiobert/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <variant>

#include "audiobert/rng.hpp"

namespace ab::cfg {

namespace {

using Field = std::variant<int RunConfig::*, double RunConfig::*, uint64_t RunConfig::*,
                           std::string RunConfig::*>;

struct Binding {
    const char* key;  // "section.key"
    Field field;
};

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> b = {
        {"run.seed", &RunConfig::seed},
        {"run.data_dir", &RunConfig::data_dir},
        {"run.checkpoint_dir", &RunConfig::checkpoint_dir},

        {"gen.animal_examples", &RunConfig::gen_animal_examples},
        {"gen.animal_classes", &RunConfig::gen_animal_classes},
        {"gen.animal_gen", &RunConfig::gen_animal_gen},
        {"gen.pitch_examples", &RunConfig::gen_pitch_examples},
        {"gen.pitch_sources", &RunConfig::gen_pitch_sources},
        {"gen.pitch_gen", &RunConfig::gen_pitch_gen},
        {"gen.negatives", &RunConfig::gen_negatives},

        {"encoder.layers", &RunConfig::enc_layers},
        {"encoder.d", &RunConfig::enc_d},
        {"encoder.heads", &RunConfig::enc_heads},
        {"encoder.ffn", &RunConfig::enc_ffn},
        {"encoder.lora_rank", &RunConfig::lora_rank},
        {"encoder.lora_alpha", &RunConfig::lora_alpha},

        {"tower.layers", &RunConfig::tower_layers},
        {"tower.d", &RunConfig::tower_d},
        {"tower.heads", &RunConfig::tower_heads},
        {"tower.ffn", &RunConfig::tower_ffn},
        {"tower.mel_bins", &RunConfig::tower_mel_bins},
        {"tower.patch", &RunConfig::tower_patch},

        {"pretrain.sentences", &RunConfig::pretrain_sentences},
        {"pretrain.epochs", &RunConfig::pretrain_epochs},
        {"pretrain.batch", &RunConfig::pretrain_batch},
        {"pretrain.lr", &RunConfig::pretrain_lr},
        {"pretrain.mask_rate", &RunConfig::pretrain_mask_rate},

        {"detector.layers", &RunConfig::det_layers},
        {"detector.d", &RunConfig::det_d},
        {"detector.heads", &RunConfig::det_heads},
        {"detector.ffn", &RunConfig::det_ffn},
        {"detector.epochs", &RunConfig::det_epochs},
        {"detector.batch", &RunConfig::det_batch},
        {"detector.lr", &RunConfig::det_lr},

        {"clap.text_layers", &RunConfig::clap_text_layers},
        {"clap.text_d", &RunConfig::clap_text_d},
        {"clap.text_heads", &RunConfig::clap_text_heads},
        {"clap.text_ffn", &RunConfig::clap_text_ffn},
        {"clap.embed_dim", &RunConfig::clap_embed_dim},
        {"clap.tau", &RunConfig::clap_tau},
        {"clap.epochs", &RunConfig::clap_epochs},
        {"clap.batch", &RunConfig::clap_batch},
        {"clap.lr", &RunConfig::clap_lr},

        {"audiobert.epochs", &RunConfig::ab_epochs},
        {"audiobert.batch", &RunConfig::ab_batch},
        {"audiobert.lr", &RunConfig::ab_lr},
    };
    return b;
}

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void value_fail(const std::string& key, const std::string& value) {
    throw std::invalid_argument("config: bad value '" + value + "' for key '" + key + "'");
}

void assign(RunConfig& c, const Binding& b, const std::string& key, const std::string& value) {
    if (value.empty()) value_fail(key, value);
    try {
        size_t used = 0;
        if (auto* f = std::get_if<int RunConfig::*>(&b.field)) {
            const long v = std::stol(value, &used);
            if (used != value.size() || v < INT32_MIN || v > INT32_MAX) value_fail(key, value);
            c.*(*f) = static_cast<int>(v);
        } else if (auto* f2 = std::get_if<double RunConfig::*>(&b.field)) {
            const double v = std::stod(value, &used);
            if (used != value.size()) value_fail(key, value);
            c.*(*f2) = v;
        } else if (auto* f3 = std::get_if<uint64_t RunConfig::*>(&b.field)) {
            const unsigned long long v = std::stoull(value, &used);
            if (used != value.size()) value_fail(key, value);
            c.*(*f3) = v;
        } else {
            c.*std::get<std::string RunConfig::*>(b.field) = value;
        }
    } catch (const std::invalid_argument&) {
        value_fail(key, value);
    } catch (const std::out_of_range&) {
        value_fail(key, value);
    }
}

const Binding& binding_of(const std::string& key) {
    for (const auto& b : bindings())
        if (key == b.key) return b;
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string render(const RunConfig& c, const Binding& b) {
    std::ostringstream os;
    if (auto* f = std::get_if<int RunConfig::*>(&b.field))
        os << c.*(*f);
    else if (auto* f2 = std::get_if<double RunConfig::*>(&b.field))
        os << c.*(*f2);
    else if (auto* f3 = std::get_if<uint64_t RunConfig::*>(&b.field))
        os << c.*(*f3);
    else
        os << c.*std::get<std::string RunConfig::*>(b.field);
    return os.str();
}

}  // namespace

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        out.reserve(bindings().size());
        for (const auto& b : bindings()) out.emplace_back(b.key);
        return out;
    }();
    return keys;
}

RunConfig parse(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto cut = line.find_first_of("#;");
        const std::string body = trim(cut == std::string::npos ? line : line.substr(0, cut));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']' || body.size() < 3)
                throw std::invalid_argument("config: malformed section header at line " +
                                            std::to_string(lineno));
            section = trim(body.substr(1, body.size() - 2));
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key=value at line " +
                                        std::to_string(lineno));
        const std::string key = trim(body.substr(0, eq));
        if (section.empty())
            throw std::invalid_argument("config: key '" + key + "' before any [section]");
        const std::string dotted = section + "." + key;
        assign(c, binding_of(dotted), dotted, trim(body.substr(eq + 1)));
    }
    return c;
}

RunConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
}

void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("config: override must be section.key=value, got '" +
                                    assignment + "'");
    const std::string key = trim(assignment.substr(0, eq));
    assign(c, binding_of(key), key, trim(assignment.substr(eq + 1)));
}

void apply_env(RunConfig& c) {
    for (const auto& b : bindings()) {
        std::string var = "AB_";
        for (const char* p = b.key; *p; ++p)
            var += *p == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
        if (const char* v = std::getenv(var.c_str())) assign(c, b, b.key, v);
    }
}

std::string to_text(const RunConfig& c) {
    std::ostringstream os;
    std::string section;
    for (const auto& b : bindings()) {
        const std::string key = b.key;
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << "\n";
            os << "[" << sec << "]\n";
            section = sec;
        }
        os << key.substr(dot + 1) << " = " << render(c, b) << "\n";
    }
    return os.str();
}

bench::GenOptions gen_options(const RunConfig& c) {
    bench::GenOptions o;
    o.animal_examples = c.gen_animal_examples;
    o.animal_classes = c.gen_animal_classes;
    o.animal_gen = c.gen_animal_gen;
    o.pitch_examples = c.gen_pitch_examples;
    o.pitch_sources = c.gen_pitch_sources;
    o.pitch_gen = c.gen_pitch_gen;
    o.negatives = c.gen_negatives;
    o.seed = sub_seed(c.seed, "data");
    return o;
}

clap::AudioTowerConfig tower_config(const RunConfig& c) {
    clap::AudioTowerConfig t;
    t.layers = c.tower_layers;
    t.d = c.tower_d;
    t.heads = c.tower_heads;
    t.ffn = c.tower_ffn;
    t.mel_bins = c.tower_mel_bins;
    t.patch = c.tower_patch;
    return t;
}

pipe::PretrainOptions pretrain_options(const RunConfig& c) {
    pipe::PretrainOptions o;
    o.sentences = c.pretrain_sentences;
    o.epochs = c.pretrain_epochs;
    o.batch = c.pretrain_batch;
    o.lr = c.pretrain_lr;
    o.mask_rate = c.pretrain_mask_rate;
    o.seed = sub_seed(c.seed, "audiobert");
    o.config.layers = c.enc_layers;
    o.config.d = c.enc_d;
    o.config.heads = c.enc_heads;
    o.config.ffn = c.enc_ffn;
    o.config.lora_rank = c.lora_rank;
    o.config.lora_alpha = c.lora_alpha;
    return o;
}

pipe::DetectorTrainOptions detector_options(const RunConfig& c) {
    pipe::DetectorTrainOptions o;
    o.epochs = c.det_epochs;
    o.batch = c.det_batch;
    o.lr = c.det_lr;
    o.seed = sub_seed(c.seed, "detector");
    o.config.layers = c.det_layers;
    o.config.d = c.det_d;
    o.config.heads = c.det_heads;
    o.config.ffn = c.det_ffn;
    return o;
}

clap::ClapTrainOptions clap_options(const RunConfig& c) {
    clap::ClapTrainOptions o;
    o.epochs = c.clap_epochs;
    o.batch = c.clap_batch;
    o.lr = c.clap_lr;
    o.seed = sub_seed(c.seed, "clap");
    o.config.text_layers = c.clap_text_layers;
    o.config.text_d = c.clap_text_d;
    o.config.text_heads = c.clap_text_heads;
    o.config.text_ffn = c.clap_text_ffn;
    o.config.embed_dim = c.clap_embed_dim;
    o.config.tau = c.clap_tau;
    o.config.audio = tower_config(c);
    return o;
}

pipe::AudioBertTrainOptions audiobert_options(const RunConfig& c) {
    pipe::AudioBertTrainOptions o;
    o.epochs = c.ab_epochs;
    o.batch = c.ab_batch;
    o.lr = c.ab_lr;
    o.seed = sub_seed(c.seed, "audiobert");
    return o;
}

}  // namespace ab::cfg
