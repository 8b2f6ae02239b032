#include "audiobert/benchgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "audiobert/rng.hpp"
#include "audiobert/textproc.hpp"

namespace ab::bench {

using ordered_json = nlohmann::ordered_json;

const std::string& to_string(Task t) {
    static const std::string names[] = {"animal", "pitch"};
    return names[static_cast<size_t>(t)];
}

const std::string& to_string(Split s) {
    static const std::string names[] = {"train", "dev", "test", "gen"};
    return names[static_cast<size_t>(s)];
}

Task task_from_string(const std::string& s) {
    if (s == "animal") return Task::animal;
    if (s == "pitch") return Task::pitch;
    throw std::invalid_argument("unknown task: " + s);
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    if (s == "gen") return Split::gen;
    throw std::invalid_argument("unknown split: " + s);
}

const std::vector<std::pair<std::string, std::string>>& animal_lexicon() {
    // order matches the synthesis table so class spectra ascend in pitch
    static const std::vector<std::pair<std::string, std::string>> lex = {
        {"lion", "roar"},     {"elephant", "trumpet"}, {"cow", "moo"},
        {"tiger", "growl"},   {"horse", "neigh"},      {"frog", "ribbit"},
        {"pig", "oink"},      {"sheep", "baa"},        {"dog", "woof"},
        {"owl", "hoot"},      {"turkey", "gobble"},    {"crow", "caw"},
        {"wolf", "howl"},     {"duck", "quack"},       {"monkey", "chatter"},
        {"cat", "meow"},      {"rooster", "cockadoodledoo"},
        {"seagull", "squawk"}, {"mouse", "squeak"},    {"bee", "buzz"},
        {"sparrow", "tweet"}, {"cricket", "chirp"},    {"mosquito", "whine"},
        {"snake", "hiss"},
    };
    return lex;
}

std::vector<PitchSource> default_pitch_sources(int count) {
    static const std::array<const char*, 20> names = {
        "tuba",       "acoustic bass", "trombone",     "cello",    "french horn",
        "bassoon",    "guitar",        "viola",        "synthesizer", "clarinet",
        "harpsichord", "oboe",         "violin",       "flute",    "music box",
        "glockenspiel", "xylophone",   "celesta",      "piccolo",  "tin whistle"};
    if (count < 2 || count > static_cast<int>(names.size()))
        throw std::invalid_argument("default_pitch_sources: count must be in [2, " +
                                    std::to_string(names.size()) + "]");
    std::vector<PitchSource> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double center = 80.0 * std::pow(2500.0 / 80.0, static_cast<double>(i) / 19.0);
        PitchSource s;
        s.name = names[static_cast<size_t>(i)];
        s.f0_lo = center * 0.94;
        s.f0_hi = center * 1.06;
        s.partials = 1 + (i * 3) % 5;
        out.push_back(std::move(s));
    }
    return out;
}

bool pitch_filter(double p1, double p2) {
    if (!(p1 > 0.0) || !(p2 > 0.0))
        throw std::invalid_argument("pitch_filter: pitches must be positive");
    return std::abs(p1 - p2) / std::min(p1, p2) > 0.10;
}

bool heldout_pair(int a, int b) {
    if (a > b) std::swap(a, b);
    return (a + b) % 7 == 3;
}

namespace {

std::string an(const std::string& word) {
    switch (word.empty() ? '\0' : word.front()) {
        case 'a': case 'e': case 'i': case 'o': case 'u': return "an";
        default: return "a";
    }
}

// accumulates prompt text while recording which pieces are auditory spans
struct PromptBuilder {
    std::string text;
    std::vector<CharSpan> spans;

    PromptBuilder& lit(const std::string& s) {
        text += s;
        return *this;
    }
    PromptBuilder& span(const std::string& s) {
        const int begin = static_cast<int>(text.size());
        text += s;
        spans.push_back({begin, static_cast<int>(text.size())});
        return *this;
    }
};

PromptBuilder animal_prompt(int tmpl, const std::string& o) {
    PromptBuilder b;
    switch (tmpl) {
        case 0: b.span(o).lit(" is the sound a [MASK] makes"); break;
        case 1: b.lit("the [MASK] goes ").span(o); break;
        case 2: b.lit("an animal that says ").span(o).lit(" is a [MASK]"); break;
        case 3: b.lit("you can hear ").span(o).lit(" coming from a [MASK]"); break;
        default: b.lit("the ").span(o).lit(" sound belongs to a [MASK]"); break;
    }
    return b;
}

PromptBuilder pitch_prompt(int tmpl, const std::string& x, const std::string& y) {
    // subject first in every template, so spans[0]/audio_refs[0] belong to X
    PromptBuilder b;
    switch (tmpl) {
        case 0:
            b.lit("the ").span("sound of " + an(x) + " " + x)
                .lit(" typically has a [MASK] pitch than " + an(y) + " ").span(y);
            break;
        case 1:
            b.lit(an(x) + " ").span(x)
                .lit(" usually sounds [MASK] in pitch than " + an(y) + " ").span(y);
            break;
        case 2:
            b.lit("the pitch of " + an(x) + " ").span(x)
                .lit(" is typically [MASK] than the pitch of " + an(y) + " ").span(y);
            break;
        case 3:
            b.lit(an(x) + " ").span(x)
                .lit(" tone is usually [MASK] pitched than " + an(y) + " ").span(y)
                .lit(" tone");
            break;
        default:
            b.lit("the typical sound of " + an(x) + " ").span(x)
                .lit(" is [MASK] in pitch than the sound of " + an(y) + " ").span(y);
            break;
    }
    return b;
}

std::string animal_caption(int tmpl, const std::string& cls, const std::string& o) {
    switch (tmpl) {
        case 0: return "the " + o + " of " + an(cls) + " " + cls;
        case 1: return an(cls) + " " + cls + " makes " + an(o) + " " + o + " sound";
        case 2: return "the sound of " + an(cls) + " " + cls;
        default: return o + " sound from " + an(cls) + " " + cls;
    }
}

std::string pitch_caption(int tmpl, const std::string& src) {
    switch (tmpl) {
        case 0: return "the sound of " + an(src) + " " + src;
        case 1: return an(src) + " " + src + " playing a tone";
        case 2: return "a tone from " + an(src) + " " + src;
        default: return "the typical sound of " + an(src) + " " + src;
    }
}

std::string zero_pad(int value, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*d", width, value);
    return buf;
}

}  // namespace

std::string animal_prompt_text(int tmpl, const std::string& onomatopoeia) {
    return animal_prompt(tmpl, onomatopoeia).text;
}

std::string pitch_prompt_text(int tmpl, const std::string& x, const std::string& y) {
    return pitch_prompt(tmpl, x, y).text;
}

GenBatch gen_animal(int n, int classes, uint64_t seed, bool heldout_templates) {
    const auto& lex = animal_lexicon();
    if (classes < 2 || classes > static_cast<int>(lex.size()))
        throw std::invalid_argument("gen_animal: classes must be in [2, " +
                                    std::to_string(lex.size()) + "]");
    if (n < classes) throw std::invalid_argument("gen_animal: need n >= classes");

    const std::string ex_prefix = heldout_templates ? "animal_gen_" : "animal_";
    const std::string clip_prefix = heldout_templates ? "aclip_gen_" : "aclip_";
    const int pool = std::max(1, std::min(10, n / classes / 5 + 1));

    GenBatch out;
    for (int c = 0; c < classes; ++c) {
        const auto& [cls, ono] = lex[static_cast<size_t>(c)];
        for (int k = 0; k < pool; ++k) {
            audio::SynthParams p;
            p.duration = 1.0;
            p.animal_class = cls;
            const std::string id = clip_prefix + cls + "_" + zero_pad(k, 2);
            ClipRecord rec;
            rec.clip = audio::synth(audio::SynthKind::animal_signature, p, sub_seed(seed, id));
            rec.clip.id = id;
            rec.task = Task::animal;
            rec.label = cls;
            rec.caption = animal_caption(k % 4, cls, ono);
            out.clips.push_back(std::move(rec));
        }
    }

    int emitted = 0;
    for (int c = 0; c < classes; ++c) {
        const auto& [cls, ono] = lex[static_cast<size_t>(c)];
        const int count = n / classes + (c < n % classes ? 1 : 0);
        for (int k = 0; k < count; ++k, ++emitted) {
            const int tmpl = heldout_templates ? 4 : k % 4;
            PromptBuilder b = animal_prompt(tmpl, ono);
            BenchExample ex;
            ex.id = ex_prefix + zero_pad(emitted, 5);
            ex.task = Task::animal;
            ex.prompt = std::move(b.text);
            ex.answer = cls;
            ex.spans = std::move(b.spans);
            ex.audio_refs = {clip_prefix + cls + "_" + zero_pad(k % pool, 2)};
            ex.split = heldout_templates ? Split::gen : Split::train;
            out.examples.push_back(std::move(ex));
        }
    }
    return out;
}

GenBatch gen_pitch(int n, const std::vector<PitchSource>& sources, uint64_t seed, PairSet pairs) {
    if (n < 1) throw std::invalid_argument("gen_pitch: n must be positive");
    if (sources.size() < 2) throw std::invalid_argument("gen_pitch: need at least 2 sources");
    for (const auto& s : sources)
        if (!(s.f0_lo > 0.0) || !(s.f0_hi > s.f0_lo))
            throw std::invalid_argument("gen_pitch: source " + s.name + " has a bad f0 range");

    const std::string ex_prefix = pairs == PairSet::heldout ? "pitch_gen_" : "pitch_";
    const std::string clip_prefix = pairs == PairSet::heldout ? "pclip_gen_" : "pclip_";
    const int num_sources = static_cast<int>(sources.size());

    Rng rng(seed);
    GenBatch out;
    const long max_attempts = 40L * n + 200;
    long attempts = 0;
    int emitted = 0;
    while (emitted < n && attempts < max_attempts) {
        ++attempts;
        const int i = static_cast<int>(rng.uniform_int(num_sources));
        int j = static_cast<int>(rng.uniform_int(num_sources - 1));
        if (j >= i) ++j;
        const double f0_i = rng.uniform(sources[static_cast<size_t>(i)].f0_lo,
                                        sources[static_cast<size_t>(i)].f0_hi);
        const double f0_j = rng.uniform(sources[static_cast<size_t>(j)].f0_lo,
                                        sources[static_cast<size_t>(j)].f0_hi);
        const uint64_t seed_i = rng.next_u64();
        const uint64_t seed_j = rng.next_u64();

        const bool held = heldout_pair(i, j);
        if (pairs == PairSet::main && held) continue;
        if (pairs == PairSet::heldout && !held) continue;

        auto make_clip = [&](int src, double f0, uint64_t clip_seed) {
            audio::SynthParams p;
            p.f0 = f0;
            p.duration = 0.5;
            p.partials = sources[static_cast<size_t>(src)].partials;
            return audio::synth(audio::SynthKind::harmonic_tone, p, clip_seed);
        };
        audio::AudioClip clip_i = make_clip(i, f0_i, seed_i);
        audio::AudioClip clip_j = make_clip(j, f0_j, seed_j);
        double p_i = 0.0, p_j = 0.0;
        try {
            p_i = audio::estimate_pitch(clip_i);
            p_j = audio::estimate_pitch(clip_j);
        } catch (const audio::UnvoicedError&) {
            continue;
        }
        if (!pitch_filter(p_i, p_j)) continue;

        // alternate the target answer and orient the pair to match, keeping
        // the higher/lower counts balanced by construction
        const bool want_higher = emitted % 2 == 0;
        const bool i_higher = p_i > p_j;
        const int x_src = want_higher == i_higher ? i : j;
        const int y_src = want_higher == i_higher ? j : i;
        audio::AudioClip& x_clip = want_higher == i_higher ? clip_i : clip_j;
        audio::AudioClip& y_clip = want_higher == i_higher ? clip_j : clip_i;
        const double x_pitch = want_higher == i_higher ? p_i : p_j;
        const double y_pitch = want_higher == i_higher ? p_j : p_i;

        const std::string base = zero_pad(emitted, 5);
        x_clip.id = clip_prefix + base + "_x";
        y_clip.id = clip_prefix + base + "_y";

        for (auto* side : {&x_clip, &y_clip}) {
            ClipRecord rec;
            rec.clip = std::move(*side);
            rec.task = Task::pitch;
            const int src = side == &x_clip ? x_src : y_src;
            rec.label = sources[static_cast<size_t>(src)].name;
            rec.caption = pitch_caption(emitted % 4, rec.label);
            rec.measured_f0 = side == &x_clip ? x_pitch : y_pitch;
            out.clips.push_back(std::move(rec));
        }

        PromptBuilder b = pitch_prompt(emitted % 5, sources[static_cast<size_t>(x_src)].name,
                                       sources[static_cast<size_t>(y_src)].name);
        BenchExample ex;
        ex.id = ex_prefix + base;
        ex.task = Task::pitch;
        ex.prompt = std::move(b.text);
        ex.answer = want_higher ? "higher" : "lower";
        ex.spans = std::move(b.spans);
        ex.audio_refs = {clip_prefix + base + "_x", clip_prefix + base + "_y"};
        ex.split = pairs == PairSet::heldout ? Split::gen : Split::train;
        out.examples.push_back(std::move(ex));
        ++emitted;
    }
    if (emitted < n)
        throw std::runtime_error("gen_pitch: produced only " + std::to_string(emitted) + " of " +
                                 std::to_string(n) + " examples after " +
                                 std::to_string(attempts) +
                                 " attempts (pair-set or pitch-filter rejections)");
    return out;
}

namespace {

std::array<int, 3> largest_remainder_702010(int n) {
    // counts are n*frac/10 with the shortfall going to the largest remaining
    // tenths; ties resolve train > dev > test
    const std::array<int, 3> numer = {7, 1, 2};
    std::array<int, 3> counts{};
    std::array<int, 3> rem{};
    int assigned = 0;
    for (int s = 0; s < 3; ++s) {
        counts[static_cast<size_t>(s)] = n * numer[static_cast<size_t>(s)] / 10;
        rem[static_cast<size_t>(s)] = n * numer[static_cast<size_t>(s)] % 10;
        assigned += counts[static_cast<size_t>(s)];
    }
    for (int left = n - assigned; left > 0; --left) {
        int best = 0;
        for (int s = 1; s < 3; ++s)
            if (rem[static_cast<size_t>(s)] > rem[static_cast<size_t>(best)]) best = s;
        ++counts[static_cast<size_t>(best)];
        rem[static_cast<size_t>(best)] = -1;
    }
    return counts;
}

}  // namespace

void assign_splits(std::vector<BenchExample>& examples, uint64_t seed) {
    const int n = static_cast<int>(examples.size());
    const auto counts = largest_remainder_702010(n);
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    int at = 0;
    for (int s = 0; s < 3; ++s)
        for (int k = 0; k < counts[static_cast<size_t>(s)]; ++k, ++at)
            examples[order[static_cast<size_t>(at)]].split = static_cast<Split>(s);
}

namespace {

std::vector<NegativeExample> gen_negatives(int n, uint64_t seed) {
    static const std::vector<std::string> countries = {
        "france", "spain", "japan", "brazil", "egypt",  "canada",
        "norway", "kenya", "india", "peru",   "chile",  "poland"};
    static const std::vector<std::string> names = {
        "alice", "bruno", "carla", "david", "emma",
        "felix", "grace", "henry", "irene", "jonas"};
    static const std::vector<std::string> adjectives = {
        "heavy", "light", "bright", "dark",  "narrow",
        "wide",  "smooth", "rough", "tall",  "short"};

    std::vector<NegativeExample> out;
    out.reserve(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
        const int tmpl = k % 5;
        const size_t pick = static_cast<size_t>(k / 5);
        std::string prompt;
        switch (tmpl) {
            case 0: prompt = "the capital of " + countries[pick % countries.size()] + " is [MASK]"; break;
            case 1: prompt = "[MASK] is the largest city in " + countries[pick % countries.size()]; break;
            case 2: prompt = "my friend " + names[pick % names.size()] + " lives in [MASK]"; break;
            case 3: prompt = "the opposite of " + adjectives[pick % adjectives.size()] + " is [MASK]"; break;
            default: prompt = "a " + adjectives[pick % adjectives.size()] + " box weighs [MASK] kilograms"; break;
        }
        out.push_back({"neg_" + zero_pad(k, 5), std::move(prompt), Split::train});
    }
    // same 70/10/20 assignment as the main examples
    const auto counts = largest_remainder_702010(n);
    std::vector<size_t> order(out.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    int at = 0;
    for (int s = 0; s < 3; ++s)
        for (int k = 0; k < counts[static_cast<size_t>(s)]; ++k, ++at)
            out[order[static_cast<size_t>(at)]].split = static_cast<Split>(s);
    return out;
}

}  // namespace

Dataset generate(const GenOptions& opt) {
    if (opt.animal_gen < 0 || opt.pitch_gen < 0 || opt.negatives < 0)
        throw std::invalid_argument("generate: counts must be non-negative");
    Dataset ds;
    ds.options = opt;

    GenBatch animal = gen_animal(opt.animal_examples, opt.animal_classes,
                                 sub_seed(opt.seed, "bench.animal"));
    assign_splits(animal.examples, sub_seed(opt.seed, "bench.split.animal"));

    const auto sources = default_pitch_sources(opt.pitch_sources);
    GenBatch pitch = gen_pitch(opt.pitch_examples, sources, sub_seed(opt.seed, "bench.pitch"));
    assign_splits(pitch.examples, sub_seed(opt.seed, "bench.split.pitch"));

    auto absorb = [&ds](GenBatch&& b) {
        ds.examples.insert(ds.examples.end(), std::make_move_iterator(b.examples.begin()),
                           std::make_move_iterator(b.examples.end()));
        ds.clips.insert(ds.clips.end(), std::make_move_iterator(b.clips.begin()),
                        std::make_move_iterator(b.clips.end()));
    };
    absorb(std::move(animal));
    absorb(std::move(pitch));
    if (opt.animal_gen > 0)
        absorb(gen_animal(opt.animal_gen, opt.animal_classes,
                          sub_seed(opt.seed, "bench.animal.gen"), true));
    if (opt.pitch_gen > 0)
        absorb(gen_pitch(opt.pitch_gen, sources, sub_seed(opt.seed, "bench.pitch.gen"),
                         PairSet::heldout));
    if (opt.negatives > 0) ds.negatives = gen_negatives(opt.negatives, sub_seed(opt.seed, "bench.neg"));
    return ds;
}

std::string manifest_json(const Dataset& ds) {
    ordered_json m;
    m["generator_version"] = 1;
    m["seed"] = ds.options.seed;

    ordered_json counts;
    counts["examples"] = ds.examples.size();
    for (const auto split : {Split::train, Split::dev, Split::test, Split::gen})
        counts[to_string(split)] = std::count_if(
            ds.examples.begin(), ds.examples.end(),
            [split](const BenchExample& e) { return e.split == split; });
    counts["negatives"] = ds.negatives.size();
    counts["clips"] = ds.clips.size();
    m["counts"] = counts;

    ordered_json tasks;
    for (const auto task : {Task::animal, Task::pitch}) {
        ordered_json t;
        int64_t examples = 0, words = 0, tokens = 0, higher = 0, lower = 0;
        for (const auto& e : ds.examples) {
            if (e.task != task) continue;
            ++examples;
            const auto split_words = text::word_split(e.prompt);
            words += static_cast<int64_t>(split_words.size());
            tokens += static_cast<int64_t>(split_words.size()) + 2;  // [CLS], [SEP]
            if (e.answer == "higher") ++higher;
            if (e.answer == "lower") ++lower;
        }
        int64_t clips = 0, caption_words = 0;
        for (const auto& c : ds.clips) {
            if (c.task != task) continue;
            ++clips;
            caption_words += static_cast<int64_t>(text::word_split(c.caption).size());
        }
        t["examples"] = examples;
        t["clips"] = clips;
        t["prompt_words"] = words;
        t["prompt_tokens"] = tokens;
        t["caption_words"] = caption_words;
        if (task == Task::pitch) {
            t["higher"] = higher;
            t["lower"] = lower;
        }
        tasks[to_string(task)] = t;
    }
    m["tasks"] = tasks;
    return m.dump(2) + "\n";
}

// ---- serialization ----

namespace {

ordered_json example_to_json(const BenchExample& e) {
    ordered_json j;
    j["id"] = e.id;
    j["task"] = to_string(e.task);
    j["prompt"] = e.prompt;
    j["answer"] = e.answer;
    ordered_json spans = ordered_json::array();
    for (const auto& s : e.spans) spans.push_back({{"begin", s.begin}, {"end", s.end}});
    j["spans"] = spans;
    j["audio_refs"] = e.audio_refs;
    j["split"] = to_string(e.split);
    return j;
}

BenchExample example_from_json(const ordered_json& j) {
    BenchExample e;
    e.id = j.at("id").get<std::string>();
    e.task = task_from_string(j.at("task").get<std::string>());
    e.prompt = j.at("prompt").get<std::string>();
    e.answer = j.at("answer").get<std::string>();
    for (const auto& s : j.at("spans"))
        e.spans.push_back({s.at("begin").get<int>(), s.at("end").get<int>()});
    e.audio_refs = j.at("audio_refs").get<std::vector<std::string>>();
    e.split = split_from_string(j.at("split").get<std::string>());
    return e;
}

std::vector<ordered_json> read_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<ordered_json> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            rows.push_back(ordered_json::parse(line));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace

std::string examples_jsonl(const std::vector<BenchExample>& examples) {
    std::string out;
    for (const auto& e : examples) out += example_to_json(e).dump() + "\n";
    return out;
}

std::vector<BenchExample> read_examples(const std::string& path) {
    std::vector<BenchExample> out;
    for (const auto& row : read_jsonl(path)) out.push_back(example_from_json(row));
    return out;
}

std::vector<NegativeExample> read_negatives(const std::string& path) {
    std::vector<NegativeExample> out;
    for (const auto& row : read_jsonl(path))
        out.push_back({row.at("id").get<std::string>(), row.at("prompt").get<std::string>(),
                       split_from_string(row.at("split").get<std::string>())});
    return out;
}

std::vector<ClipMeta> read_clips_meta(const std::string& path) {
    std::vector<ClipMeta> out;
    for (const auto& row : read_jsonl(path)) {
        ClipMeta m;
        m.id = row.at("id").get<std::string>();
        m.task = task_from_string(row.at("task").get<std::string>());
        m.label = row.at("label").get<std::string>();
        m.caption = row.at("caption").get<std::string>();
        m.truth_f0 = row.at("truth_f0").get<double>();
        m.measured_f0 = row.at("measured_f0").get<double>();
        out.push_back(std::move(m));
    }
    return out;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "clips");

    {
        std::ofstream os(fs::path(dir) / "dataset.jsonl", std::ios::trunc);
        os << examples_jsonl(ds.examples);
        if (!os) throw std::runtime_error("write_dataset: failed writing dataset.jsonl");
    }
    {
        std::ofstream os(fs::path(dir) / "negatives.jsonl", std::ios::trunc);
        for (const auto& n : ds.negatives) {
            ordered_json j;
            j["id"] = n.id;
            j["prompt"] = n.prompt;
            j["split"] = to_string(n.split);
            os << j.dump() << "\n";
        }
        if (!os) throw std::runtime_error("write_dataset: failed writing negatives.jsonl");
    }
    {
        std::ofstream os(fs::path(dir) / "clips_meta.jsonl", std::ios::trunc);
        for (const auto& c : ds.clips) {
            ordered_json j;
            j["id"] = c.clip.id;
            j["task"] = to_string(c.task);
            j["label"] = c.label;
            j["caption"] = c.caption;
            j["truth_f0"] = c.clip.truth_f0;
            j["measured_f0"] = c.measured_f0;
            os << j.dump() << "\n";
        }
        if (!os) throw std::runtime_error("write_dataset: failed writing clips_meta.jsonl");
    }
    {
        std::ofstream os(fs::path(dir) / "manifest.json", std::ios::trunc);
        os << manifest_json(ds);
        if (!os) throw std::runtime_error("write_dataset: failed writing manifest.json");
    }
    for (const auto& c : ds.clips)
        audio::write_wav(c.clip, (fs::path(dir) / "clips" / (c.clip.id + ".wav")).string());
}

}  // namespace ab::bench
