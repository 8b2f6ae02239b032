#include "audiobert/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "audiobert/optim.hpp"

namespace ab::pipe {

using num::Tensor;

namespace {

// word tokens take part in detection; the reserved block never does, except
// [UNK], which still covers a surface word
bool is_word_token(int id) {
    return id >= text::kReservedCount || id == text::kUnkId;
}

enc::EncoderConfig with_vocab(enc::EncoderConfig cfg, int vocab, int lora_rank) {
    cfg.vocab = vocab;
    cfg.lora_rank = lora_rank;
    return cfg;
}

int argmax_row(const std::vector<double>& row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<Tensor> tensors_of(const std::vector<num::NamedTensor>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

std::vector<double> pack_encoder_config(const enc::EncoderConfig& c) {
    return {static_cast<double>(c.layers),        static_cast<double>(c.d),
            static_cast<double>(c.heads),         static_cast<double>(c.ffn),
            static_cast<double>(c.vocab),         static_cast<double>(c.max_positions),
            static_cast<double>(c.lora_rank),     c.lora_alpha};
}

enc::EncoderConfig unpack_encoder_config(const double* v) {
    enc::EncoderConfig c;
    c.layers = static_cast<int>(v[0]);
    c.d = static_cast<int>(v[1]);
    c.heads = static_cast<int>(v[2]);
    c.ffn = static_cast<int>(v[3]);
    c.vocab = static_cast<int>(v[4]);
    c.max_positions = static_cast<int>(v[5]);
    c.lora_rank = static_cast<int>(v[6]);
    c.lora_alpha = v[7];
    return c;
}

const num::NamedTensor& find_meta(const std::vector<num::NamedTensor>& entries,
                                  const std::string& path, size_t doubles) {
    const auto it = std::find_if(entries.begin(), entries.end(),
                                 [](const num::NamedTensor& e) { return e.name == "meta.cfg"; });
    if (it == entries.end()) throw std::runtime_error(path + ": missing config record");
    if (it->tensor.data().size() != doubles) throw std::runtime_error(path + ": bad config record");
    return *it;
}

}  // namespace

// ---------------------------------------------------------------------------
// detector

Detector::Detector(enc::EncoderConfig cfg, text::Vocabulary vocab)
    : vocab_(std::move(vocab)), encoder_(with_vocab(cfg, vocab_.size(), 0)) {}

std::vector<Span> Detector::detect(const std::string& prompt) const {
    return detect(text::tokenize(prompt, vocab_));
}

std::vector<Span> Detector::detect(const text::TokenizedPrompt& prompt) const {
    const Tensor probs = num::softmax(encoder_.tag_logits(encoder_.encode(prompt.ids)));
    const int n = static_cast<int>(prompt.ids.size());
    auto positive = [&](int i) {
        return is_word_token(prompt.ids[static_cast<size_t>(i)]) &&
               probs.at(i * 2 + 1) > kSpanThreshold;
    };

    std::vector<Span> spans;
    for (int i = 0; i < n;) {
        if (!positive(i)) {
            ++i;
            continue;
        }
        int j = i;
        double conf = 0.0;
        while (j < n && positive(j)) conf += probs.at(j++ * 2 + 1);
        Span s;
        s.start = i;
        s.end = j;
        s.confidence = conf / (j - i);
        const int cb = prompt.char_ranges[static_cast<size_t>(i)].first;
        const int ce = prompt.char_ranges[static_cast<size_t>(j - 1)].second;
        s.text = prompt.text.substr(static_cast<size_t>(cb), static_cast<size_t>(ce - cb));
        spans.push_back(std::move(s));
        i = j;
    }
    return spans;
}

std::vector<num::NamedTensor> Detector::params() const { return encoder_.params(); }

void Detector::save(const std::string& path) const {
    auto entries = params();
    const auto meta = pack_encoder_config(encoder_.config());
    entries.push_back({"meta.cfg", Tensor::from({static_cast<int64_t>(meta.size())}, meta)});
    num::save_params(path, entries);
    vocab_.save(path + ".vocab");
}

Detector Detector::load(const std::string& path) {
    const auto entries = num::load_params(path);
    const auto& meta = find_meta(entries, path, 8);
    Detector det(unpack_encoder_config(meta.tensor.data().data()),
                 text::Vocabulary::load(path + ".vocab"));
    auto dst = det.params();
    num::load_params_into(path, dst);
    return det;
}

std::vector<bench::BenchExample> filter_split(const std::vector<bench::BenchExample>& examples,
                                              bench::Split split) {
    std::vector<bench::BenchExample> out;
    for (const auto& e : examples)
        if (e.split == split) out.push_back(e);
    return out;
}

std::vector<TaggedPrompt> detector_items(const bench::Dataset& ds, bench::Split split) {
    std::vector<TaggedPrompt> out;
    for (const auto& e : ds.examples)
        if (e.split == split) out.push_back({e.prompt, e.spans});
    for (const auto& n : ds.negatives)
        if (n.split == split) out.push_back({n.prompt, {}});
    return out;
}

namespace {

// 0/1 per token, ignore on specials; gold token ranges come from char spans
std::vector<int> tag_labels(const text::TokenizedPrompt& prompt,
                            const std::vector<bench::CharSpan>& spans) {
    std::vector<int> labels(prompt.ids.size(), 0);
    for (size_t i = 0; i < prompt.ids.size(); ++i)
        if (!is_word_token(prompt.ids[i])) labels[i] = num::kIgnoreId;
    for (const auto& cs : spans) {
        const auto [b, e] = text::char_span_to_tokens(prompt, cs.begin, cs.end);
        for (int t = b; t < e; ++t) labels[static_cast<size_t>(t)] = 1;
    }
    return labels;
}

}  // namespace

DetectorTrainResult train_detector(const std::vector<TaggedPrompt>& items,
                                   const DetectorTrainOptions& opt) {
    if (items.empty()) throw std::invalid_argument("train_detector: empty dataset");
    if (opt.epochs < 1 || opt.batch < 1)
        throw std::invalid_argument("train_detector: epochs and batch must be positive");
    if (static_cast<int>(items.size()) < opt.batch)
        throw std::invalid_argument("train_detector: need at least one full batch, have " +
                                    std::to_string(items.size()));

    std::vector<std::string> corpus;
    corpus.reserve(items.size());
    for (const auto& it : items) corpus.push_back(it.prompt);

    auto cfg = opt.config;
    cfg.seed = sub_seed(opt.seed, "detector.init");
    Detector det(cfg, text::Vocabulary::build(corpus));

    struct Item {
        std::vector<int> ids;
        std::vector<int> labels;
    };
    std::vector<Item> data;
    data.reserve(items.size());
    for (const auto& it : items) {
        const auto tp = text::tokenize(it.prompt, det.vocabulary());
        auto labels = tag_labels(tp, it.spans);
        data.push_back({tp.ids, std::move(labels)});
    }

    const auto params = det.params();
    const auto [decay, no_decay] = enc::split_decay(params);
    num::AdamW optim(decay, no_decay, {.lr = opt.lr, .weight_decay = opt.weight_decay});
    const auto clip_set = tensors_of(params);

    Rng shuffle_rng(sub_seed(opt.seed, "detector.shuffle"));
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    const int steps = static_cast<int>(data.size()) / opt.batch;

    const auto& encoder = det.encoder();
    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double total = 0.0;
        for (int s = 0; s < steps; ++s) {
            std::vector<std::vector<int>> inputs;
            std::vector<int> targets;
            for (int b = 0; b < opt.batch; ++b) {
                const Item& it = data[order[static_cast<size_t>(s * opt.batch + b)]];
                inputs.push_back(it.ids);
                targets.insert(targets.end(), it.labels.begin(), it.labels.end());
            }
            std::vector<int64_t> lens;
            const Tensor emb = encoder.embed_batch(inputs, lens);
            const Tensor logits = encoder.tag_logits(encoder.encode_embedded(emb, lens));
            const Tensor loss = num::cross_entropy(logits, targets);
            optim.zero_grad();
            num::backward(loss);
            num::clip_grad_norm(clip_set, opt.clip_norm);
            optim.step();
            total += loss.item();
        }
        epoch_loss.push_back(total / steps);
    }
    return {std::move(det), std::move(epoch_loss)};
}

DetectorScores score_detector(const Detector& det, const std::vector<TaggedPrompt>& items) {
    if (items.empty()) throw std::invalid_argument("score_detector: no items");
    int64_t tok_tp = 0, tok_fp = 0, tok_fn = 0;
    int64_t matched = 0, predicted = 0, gold_total = 0;

    for (const auto& it : items) {
        const auto tp = text::tokenize(it.prompt, det.vocabulary());
        std::set<std::pair<int, int>> gold;
        std::vector<char> gold_tok(tp.ids.size(), 0);
        for (const auto& cs : it.spans) {
            const auto [b, e] = text::char_span_to_tokens(tp, cs.begin, cs.end);
            gold.insert({b, e});
            for (int t = b; t < e; ++t) gold_tok[static_cast<size_t>(t)] = 1;
        }
        gold_total += static_cast<int64_t>(gold.size());

        std::vector<char> pred_tok(tp.ids.size(), 0);
        for (const auto& s : det.detect(tp)) {
            ++predicted;
            if (gold.count({s.start, s.end})) ++matched;
            for (int t = s.start; t < s.end; ++t) pred_tok[static_cast<size_t>(t)] = 1;
        }

        for (size_t i = 0; i < tp.ids.size(); ++i) {
            if (!is_word_token(tp.ids[i])) continue;
            if (pred_tok[i] && gold_tok[i])
                ++tok_tp;
            else if (pred_tok[i])
                ++tok_fp;
            else if (gold_tok[i])
                ++tok_fn;
        }
    }

    auto f1 = [](int64_t tp_, int64_t fp_, int64_t fn_) {
        const double p = tp_ + fp_ > 0 ? static_cast<double>(tp_) / static_cast<double>(tp_ + fp_) : 0.0;
        const double r = tp_ + fn_ > 0 ? static_cast<double>(tp_) / static_cast<double>(tp_ + fn_) : 0.0;
        return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    };
    return {f1(tok_tp, tok_fp, tok_fn), f1(matched, predicted - matched, gold_total - matched)};
}

// ---------------------------------------------------------------------------
// retrieval and injection

std::vector<std::string> retrieve_for_span(const std::string& span_text,
                                           const clap::DualEncoder& clap, const retr::Index& index,
                                           int k) {
    if (k < 1) throw std::invalid_argument("retrieve_for_span: k must be positive");
    const auto hits = index.topk(clap.embed_text(span_text), static_cast<size_t>(k));
    std::vector<std::string> ids;
    ids.reserve(hits.size());
    for (const auto& h : hits) ids.push_back(h.clip_id);
    return ids;
}

Tensor inject(const Tensor& token_embeddings, const Span& span, const Tensor& audio_vec,
              const Tensor& proj_w, const Tensor& proj_b) {
    if (!token_embeddings.defined() || token_embeddings.ndim() != 2)
        throw std::invalid_argument("inject: token embeddings must be 2-D");
    if (span.start < 0 || span.start >= span.end ||
        span.end > static_cast<int>(token_embeddings.rows()))
        throw std::invalid_argument("inject: span out of range");
    return num::add_at_row(token_embeddings, span.start, num::linear(audio_vec, proj_w, proj_b));
}

// ---------------------------------------------------------------------------
// pretraining

std::vector<std::string> pretrain_corpus(const bench::Dataset& ds, int sentences, uint64_t seed) {
    if (sentences < 1) throw std::invalid_argument("pretrain_corpus: sentences must be positive");
    Rng rng(seed);
    const auto& lex = bench::animal_lexicon();
    const auto sources = bench::default_pitch_sources(20);

    std::set<std::string> uniq;
    for (const auto& n : ds.negatives)
        for (const auto& w : text::word_split(n.prompt))
            if (w != "[MASK]") uniq.insert(w);
    const std::vector<std::string> neg_words(uniq.begin(), uniq.end());

    auto fill = [](std::string s, const std::string& w) {
        const auto at = s.find("[MASK]");
        if (at != std::string::npos) s.replace(at, 6, w);
        return s;
    };
    auto pick = [&rng](const auto& v) -> const auto& {
        return v[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(v.size())))];
    };

    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(sentences));
    for (int k = 0; k < sentences; ++k) {
        const int kind = k % 3;
        if (kind == 1) {
            const int tmpl = static_cast<int>(rng.uniform_int(bench::kPitchTemplates));
            const std::string& x = pick(sources).name;
            const std::string& y = pick(sources).name;
            const char* answer = rng.uniform_int(2) == 0 ? "higher" : "lower";
            out.push_back(fill(bench::pitch_prompt_text(tmpl, x, y), answer));
        } else if (kind == 2 && !neg_words.empty()) {
            out.push_back(fill(pick(ds.negatives).prompt, pick(neg_words)));
        } else {
            const int tmpl = static_cast<int>(rng.uniform_int(bench::kAnimalTemplates));
            const std::string& ono = pick(lex).second;
            const std::string& cls = pick(lex).first;
            out.push_back(fill(bench::animal_prompt_text(tmpl, ono), cls));
        }
    }
    return out;
}

PretrainResult pretrain_encoder(const bench::Dataset& ds, const PretrainOptions& opt) {
    if (opt.epochs < 1 || opt.batch < 1)
        throw std::invalid_argument("pretrain_encoder: epochs and batch must be positive");
    if (!(opt.mask_rate > 0.0 && opt.mask_rate <= 1.0))
        throw std::invalid_argument("pretrain_encoder: mask rate must lie in (0, 1]");
    if (opt.sentences < opt.batch)
        throw std::invalid_argument("pretrain_encoder: need at least one full batch of sentences");

    const auto corpus = pretrain_corpus(ds, opt.sentences, sub_seed(opt.seed, "pretrain.corpus"));

    // the vocabulary additionally covers every prompt, answer, and negative,
    // so nothing the benchmark asks about maps to [UNK]
    std::vector<std::string> vocab_corpus = corpus;
    for (const auto& e : ds.examples) {
        vocab_corpus.push_back(e.prompt);
        vocab_corpus.push_back(e.answer);
    }
    for (const auto& n : ds.negatives) vocab_corpus.push_back(n.prompt);
    auto vocab = text::Vocabulary::build(vocab_corpus);

    auto cfg = opt.config;
    cfg.vocab = vocab.size();
    cfg.seed = sub_seed(opt.seed, "pretrain.init");
    enc::Encoder model(cfg);
    model.set_adapters(false);

    std::vector<std::vector<int>> seqs;
    seqs.reserve(corpus.size());
    for (const auto& s : corpus) seqs.push_back(text::tokenize(s, vocab).ids);

    const auto params = model.base_params();
    const auto [decay, no_decay] = enc::split_decay(params);
    num::AdamW optim(decay, no_decay, {.lr = opt.lr, .weight_decay = opt.weight_decay});
    const auto clip_set = tensors_of(params);

    Rng shuffle_rng(sub_seed(opt.seed, "pretrain.shuffle"));
    Rng mask_rng(sub_seed(opt.seed, "pretrain.mask"));
    std::vector<size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    const int steps = static_cast<int>(seqs.size()) / opt.batch;

    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double total = 0.0;
        for (int s = 0; s < steps; ++s) {
            std::vector<std::vector<int>> inputs;
            std::vector<int> targets;
            for (int b = 0; b < opt.batch; ++b) {
                const auto& ids = seqs[order[static_cast<size_t>(s * opt.batch + b)]];
                std::vector<int> in = ids;
                std::vector<int> labels(ids.size(), num::kIgnoreId);
                int masked = 0;
                for (size_t i = 0; i < ids.size(); ++i) {
                    if (ids[i] == text::kClsId || ids[i] == text::kSepId) continue;
                    if (mask_rng.uniform() < opt.mask_rate) {
                        labels[i] = ids[i];
                        in[i] = text::kMaskId;
                        ++masked;
                    }
                }
                if (masked == 0 && ids.size() > 2) {
                    // a sequence must contribute loss; mask one word at random
                    const size_t pos =
                        1 + static_cast<size_t>(mask_rng.uniform_int(static_cast<int64_t>(ids.size()) - 2));
                    labels[pos] = ids[pos];
                    in[pos] = text::kMaskId;
                }
                targets.insert(targets.end(), labels.begin(), labels.end());
                inputs.push_back(std::move(in));
            }
            std::vector<int64_t> lens;
            const Tensor emb = model.embed_batch(inputs, lens);
            const Tensor logits = model.mlm_logits(model.encode_embedded(emb, lens));
            const Tensor loss = num::cross_entropy(logits, targets);
            optim.zero_grad();
            num::backward(loss);
            num::clip_grad_norm(clip_set, opt.clip_norm);
            optim.step();
            total += loss.item();
        }
        epoch_loss.push_back(total / steps);
    }
    return {std::move(model), std::move(vocab), std::move(epoch_loss)};
}

// ---------------------------------------------------------------------------
// the assembled model

AudioBertModel::AudioBertModel(enc::Encoder base, text::Vocabulary vocab,
                               const clap::AudioTowerConfig& tower_cfg, uint64_t seed)
    : vocab_(std::move(vocab)), base_(std::move(base)) {
    if (base_.config().vocab != vocab_.size())
        throw std::invalid_argument("AudioBertModel: encoder and vocabulary sizes disagree");
    Rng rng(sub_seed(seed, "audiobert.init"));
    tower_ = clap::AudioTower(tower_cfg, rng);
    proj_w_ = Tensor::randn({base_.config().d, tower_cfg.d}, rng, 0.02, true);
    proj_b_ = Tensor::zeros({base_.config().d}, true);
}

std::vector<num::NamedTensor> AudioBertModel::params() const {
    std::vector<num::NamedTensor> out;
    for (auto& p : base_.params()) out.push_back({"base." + p.name, p.tensor});
    tower_.collect_params("inj_tower", out);
    out.push_back({"inj_proj.w", proj_w_});
    out.push_back({"inj_proj.b", proj_b_});
    return out;
}

std::vector<num::NamedTensor> AudioBertModel::trainable_params() const {
    std::vector<num::NamedTensor> out;
    for (auto& p : base_.lora_params()) out.push_back({"base." + p.name, p.tensor});
    tower_.collect_params("inj_tower", out);
    out.push_back({"inj_proj.w", proj_w_});
    out.push_back({"inj_proj.b", proj_b_});
    return out;
}

std::vector<num::NamedTensor> AudioBertModel::frozen_params() const {
    std::vector<num::NamedTensor> out;
    for (auto& p : base_.base_params()) out.push_back({"base." + p.name, p.tensor});
    for (auto& p : base_.tag_params()) out.push_back({"base." + p.name, p.tensor});
    return out;
}

audio::Spectrogram AudioBertModel::features(const audio::AudioClip& clip) const {
    return audio::logmel(clip, tower_.config().mel_bins);
}

std::vector<double> AudioBertModel::mask_logits(
    const text::TokenizedPrompt& prompt,
    const std::vector<std::pair<int, const audio::AudioClip*>>& injections, bool adapters) {
    if (prompt.mask_position < 0) throw std::invalid_argument("mask_logits: prompt has no [MASK]");
    base_.set_adapters(adapters);

    Tensor emb = base_.embed(prompt.ids);
    if (!injections.empty()) {
        std::vector<Tensor> patches;
        patches.reserve(injections.size());
        for (const auto& [row, clip] : injections) {
            if (row < 0 || row >= static_cast<int>(prompt.ids.size()))
                throw std::invalid_argument("mask_logits: injection row out of range");
            if (clip == nullptr) throw std::invalid_argument("mask_logits: missing clip");
            patches.push_back(tower_.patchify(features(*clip)));
        }
        const Tensor rows = num::linear(tower_.forward(patches), proj_w_, proj_b_);
        for (size_t i = 0; i < injections.size(); ++i)
            emb = num::add_at_row(emb, injections[i].first,
                                  num::slice_rows(rows, static_cast<int64_t>(i),
                                                  static_cast<int64_t>(i) + 1));
    }
    const Tensor hidden =
        base_.encode_embedded(emb, {static_cast<int64_t>(prompt.ids.size())});
    const Tensor logits = base_.mlm_logits(hidden);

    const int64_t v = logits.cols();
    std::vector<double> row(static_cast<size_t>(v));
    for (int64_t j = 0; j < v; ++j)
        row[static_cast<size_t>(j)] = logits.at(prompt.mask_position * v + j);
    return row;
}

namespace {

std::vector<double> pack_model_meta(const enc::EncoderConfig& e, const clap::AudioTowerConfig& t) {
    auto out = pack_encoder_config(e);
    const std::vector<double> tower = {
        static_cast<double>(t.layers),   static_cast<double>(t.d),
        static_cast<double>(t.heads),    static_cast<double>(t.ffn),
        static_cast<double>(t.mel_bins), static_cast<double>(t.patch),
        static_cast<double>(t.max_patches)};
    out.insert(out.end(), tower.begin(), tower.end());
    return out;
}

}  // namespace

void AudioBertModel::save(const std::string& path) const {
    auto entries = params();
    const auto meta = pack_model_meta(base_.config(), tower_.config());
    entries.push_back({"meta.cfg", Tensor::from({static_cast<int64_t>(meta.size())}, meta)});
    num::save_params(path, entries);
    vocab_.save(path + ".vocab");
}

AudioBertModel AudioBertModel::load(const std::string& path) {
    const auto entries = num::load_params(path);
    const auto& meta = find_meta(entries, path, 15);
    const double* v = meta.tensor.data().data();
    const enc::EncoderConfig ecfg = unpack_encoder_config(v);
    clap::AudioTowerConfig tcfg;
    tcfg.layers = static_cast<int>(v[8]);
    tcfg.d = static_cast<int>(v[9]);
    tcfg.heads = static_cast<int>(v[10]);
    tcfg.ffn = static_cast<int>(v[11]);
    tcfg.mel_bins = static_cast<int>(v[12]);
    tcfg.patch = static_cast<int>(v[13]);
    tcfg.max_patches = static_cast<int>(v[14]);

    AudioBertModel model(enc::Encoder(ecfg), text::Vocabulary::load(path + ".vocab"), tcfg, 0);
    auto dst = model.params();
    num::load_params_into(path, dst);
    return model;
}

// ---------------------------------------------------------------------------
// training and inference

ClipMap clip_map(const std::vector<bench::ClipRecord>& clips) {
    ClipMap m;
    for (const auto& c : clips) m.emplace(c.clip.id, c.clip);
    return m;
}

std::vector<clap::ClapPair> clap_pairs(const std::vector<bench::ClipRecord>& clips) {
    std::vector<clap::ClapPair> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back({c.clip, c.caption});
    return out;
}

retr::Index build_index(const clap::DualEncoder& clap, const ClipMap& clips) {
    if (clips.empty()) throw std::invalid_argument("build_index: no clips");
    retr::Index index;
    for (const auto& [id, clip] : clips) index.add({id, clap.embed_audio(clip)});
    index.freeze();
    return index;
}

AudioBertTrainResult train_audiobert(AudioBertModel& model,
                                     const std::vector<bench::BenchExample>& examples,
                                     const ClipMap& clips, const clap::DualEncoder& clap,
                                     const retr::Index& index, const AudioBertTrainOptions& opt) {
    if (examples.empty()) throw std::invalid_argument("train_audiobert: no training examples");
    if (opt.epochs < 1 || opt.batch < 1)
        throw std::invalid_argument("train_audiobert: epochs and batch must be positive");
    if (static_cast<int>(examples.size()) < opt.batch)
        throw std::invalid_argument("train_audiobert: need at least one full batch, have " +
                                    std::to_string(examples.size()));
    if (index.count() == 0) throw std::runtime_error("train_audiobert: retrieval index is empty");

    // resolve retrieval once per distinct span text and patchify each clip
    // once; training time sees only tensor handles
    struct Prepared {
        std::vector<int> ids;
        std::vector<int> labels;
        std::vector<std::pair<int, int>> injections;  // (token row, patch slot)
    };
    std::map<std::string, std::string> span_clip;
    std::map<std::string, int> clip_slot;
    std::vector<Tensor> patch_bank;

    std::vector<Prepared> data;
    data.reserve(examples.size());
    for (const auto& e : examples) {
        const auto tp = text::tokenize(e.prompt, model.vocabulary());
        auto [ids, labels] = text::mask_answer(tp, e.answer, model.vocabulary());
        Prepared pr{std::move(ids), std::move(labels), {}};
        for (const auto& cs : e.spans) {
            const auto [b, en] = text::char_span_to_tokens(tp, cs.begin, cs.end);
            (void)en;
            const std::string span_text =
                e.prompt.substr(static_cast<size_t>(cs.begin), static_cast<size_t>(cs.end - cs.begin));
            auto hit = span_clip.find(span_text);
            if (hit == span_clip.end())
                hit = span_clip.emplace(span_text, retrieve_for_span(span_text, clap, index).at(0))
                          .first;
            auto slot = clip_slot.find(hit->second);
            if (slot == clip_slot.end()) {
                const auto c = clips.find(hit->second);
                if (c == clips.end())
                    throw std::runtime_error("train_audiobert: retrieved clip '" + hit->second +
                                             "' is not in the provided clip set");
                patch_bank.push_back(model.tower().patchify(model.features(c->second)));
                slot = clip_slot.emplace(hit->second, static_cast<int>(patch_bank.size()) - 1).first;
            }
            pr.injections.push_back({b, slot->second});
        }
        data.push_back(std::move(pr));
    }

    const auto frozen = model.frozen_params();
    const uint64_t fingerprint = num::params_fingerprint(frozen);
    enc::set_trainable(frozen, false);
    const auto trainable = model.trainable_params();
    enc::set_trainable(trainable, true);
    model.base().set_adapters(true);

    const auto [decay, no_decay] = enc::split_decay(trainable);
    num::AdamW optim(decay, no_decay, {.lr = opt.lr, .weight_decay = opt.weight_decay});
    const auto clip_set = tensors_of(trainable);

    Rng shuffle_rng(sub_seed(opt.seed, "audiobert.shuffle"));
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    const int steps = static_cast<int>(data.size()) / opt.batch;

    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double total = 0.0;
        for (int s = 0; s < steps; ++s) {
            std::vector<const Prepared*> batch;
            batch.reserve(static_cast<size_t>(opt.batch));
            for (int b = 0; b < opt.batch; ++b)
                batch.push_back(&data[order[static_cast<size_t>(s * opt.batch + b)]]);

            // each distinct clip goes through the tower once per step
            std::vector<int> slots;
            std::map<int, int> local;
            for (const Prepared* p : batch)
                for (const auto& [row, slot] : p->injections)
                    if (local.emplace(slot, static_cast<int>(slots.size())).second)
                        slots.push_back(slot);

            Tensor rows;
            if (!slots.empty()) {
                std::vector<Tensor> patches;
                patches.reserve(slots.size());
                for (int sl : slots) patches.push_back(patch_bank[static_cast<size_t>(sl)]);
                rows = num::linear(model.tower().forward(patches), model.proj_w(), model.proj_b());
            }

            std::vector<std::vector<int>> inputs;
            std::vector<int> targets;
            std::vector<int64_t> offsets;
            int64_t off = 0;
            for (const Prepared* p : batch) {
                inputs.push_back(p->ids);
                targets.insert(targets.end(), p->labels.begin(), p->labels.end());
                offsets.push_back(off);
                off += static_cast<int64_t>(p->ids.size());
            }
            std::vector<int64_t> lens;
            Tensor emb = model.base().embed_batch(inputs, lens);
            for (size_t bi = 0; bi < batch.size(); ++bi)
                for (const auto& [row, slot] : batch[bi]->injections) {
                    const int64_t at = local.at(slot);
                    emb = num::add_at_row(emb, offsets[bi] + row, num::slice_rows(rows, at, at + 1));
                }

            const Tensor hidden = model.base().encode_embedded(emb, lens);
            const Tensor loss = num::cross_entropy(model.base().mlm_logits(hidden), targets);
            optim.zero_grad();
            num::backward(loss);
            num::clip_grad_norm(clip_set, opt.clip_norm);
            optim.step();
            total += loss.item();
        }
        epoch_loss.push_back(total / steps);
    }

    if (num::params_fingerprint(model.frozen_params()) != fingerprint)
        throw std::logic_error("train_audiobert: frozen base parameters moved");
    return {std::move(epoch_loss), fingerprint};
}

InferTrace infer(AudioBertModel& model, const Detector& det, const clap::DualEncoder& clap,
                 const retr::Index& index, const ClipMap& clips, const std::string& prompt,
                 const std::vector<std::string>& candidates) {
    const auto tp = text::tokenize(prompt, model.vocabulary());
    if (tp.mask_position < 0) throw std::invalid_argument("infer: prompt has no [MASK]");

    InferTrace trace;
    trace.spans = det.detect(prompt);
    trace.gated_on = !trace.spans.empty();

    std::vector<std::pair<int, const audio::AudioClip*>> injections;
    for (const auto& s : trace.spans) {
        const auto ids = retrieve_for_span(s.text, clap, index);
        const auto c = clips.find(ids.at(0));
        if (c == clips.end())
            throw std::runtime_error("infer: retrieved clip '" + ids[0] +
                                     "' is not in the provided clip set");
        trace.retrieved.push_back(ids[0]);
        injections.push_back({s.start, &c->second});
    }

    const auto row = model.mask_logits(tp, injections, trace.gated_on);
    int best;
    if (candidates.empty()) {
        best = argmax_row(row);
    } else {
        best = -1;
        for (const auto& w : candidates) {
            if (!model.vocabulary().contains(w))
                throw std::invalid_argument("infer: candidate '" + w + "' not in vocabulary");
            const int id = model.vocabulary().id(w);
            if (best < 0 || row[static_cast<size_t>(id)] > row[static_cast<size_t>(best)]) best = id;
        }
    }
    trace.answer = model.vocabulary().token(best);
    return trace;
}

// ---------------------------------------------------------------------------
// evaluation

MetricsReport evaluate(AudioBertModel& model, const Detector& det, const clap::DualEncoder& clap,
                       const retr::Index& index, const std::vector<bench::BenchExample>& examples,
                       const ClipMap& clips, const EvalOptions& opt) {
    if (examples.empty()) throw std::invalid_argument("evaluate: empty split");

    MetricsReport r;
    r.model = opt.model_name;
    r.dataset = opt.dataset_name;
    r.split = opt.split;
    r.seed = opt.seed;
    r.forced_base = opt.force_base;

    std::vector<TaggedPrompt> tagged;
    tagged.reserve(examples.size());
    for (const auto& e : examples) tagged.push_back({e.prompt, e.spans});
    r.detector = score_detector(det, tagged);

    const auto& vocab = model.vocabulary();
    std::map<std::string, std::string> span_clip;
    int64_t animal_ok = 0, pitch_ok = 0, pitch_unrestricted_ok = 0;

    for (const auto& e : examples) {
        const auto tp = text::tokenize(e.prompt, vocab);
        ++r.prompts;

        std::vector<std::pair<int, const audio::AudioClip*>> injections;
        bool gated = false;
        if (!opt.force_base) {
            const auto spans = det.detect(e.prompt);
            gated = !spans.empty();
            r.spans_detected += static_cast<int64_t>(spans.size());
            for (const auto& s : spans) {
                auto hit = span_clip.find(s.text);
                if (hit == span_clip.end())
                    hit = span_clip.emplace(s.text, retrieve_for_span(s.text, clap, index).at(0))
                              .first;
                const auto c = clips.find(hit->second);
                if (c == clips.end())
                    throw std::runtime_error("evaluate: retrieved clip '" + hit->second +
                                             "' is not in the provided clip set");
                injections.push_back({s.start, &c->second});
            }
        }
        gated ? ++r.gated_on : ++r.gated_off;

        const auto row = model.mask_logits(tp, injections, gated);
        if (e.task == bench::Task::animal) {
            ++r.animal.n;
            if (vocab.token(argmax_row(row)) == e.answer) ++animal_ok;
        } else {
            ++r.pitch.n;
            if (!vocab.contains("higher") || !vocab.contains("lower"))
                throw std::runtime_error("evaluate: vocabulary lacks the pitch answer words");
            const double hi = row[static_cast<size_t>(vocab.id("higher"))];
            const double lo = row[static_cast<size_t>(vocab.id("lower"))];
            const std::string pick = hi >= lo ? "higher" : "lower";
            if (pick == e.answer) ++pitch_ok;
            if (vocab.token(argmax_row(row)) == e.answer) ++pitch_unrestricted_ok;
        }
    }

    if (r.animal.n > 0)
        r.animal.accuracy = static_cast<double>(animal_ok) / static_cast<double>(r.animal.n);
    if (r.pitch.n > 0) {
        r.pitch.accuracy = static_cast<double>(pitch_ok) / static_cast<double>(r.pitch.n);
        r.pitch_accuracy_unrestricted =
            static_cast<double>(pitch_unrestricted_ok) / static_cast<double>(r.pitch.n);
    }
    return r;
}

std::string metrics_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["dataset"] = r.dataset;
    j["split"] = r.split;
    j["seed"] = r.seed;

    nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
    {
        nlohmann::ordered_json t;
        t["task"] = "animal";
        t["accuracy"] = r.animal.accuracy;
        t["n"] = r.animal.n;
        tasks.push_back(std::move(t));
    }
    {
        nlohmann::ordered_json t;
        t["task"] = "pitch";
        t["accuracy"] = r.pitch.accuracy;
        t["accuracy_unrestricted"] = r.pitch_accuracy_unrestricted;
        t["n"] = r.pitch.n;
        tasks.push_back(std::move(t));
    }
    j["tasks"] = std::move(tasks);

    nlohmann::ordered_json d;
    d["token_f1"] = r.detector.token_f1;
    d["span_f1"] = r.detector.span_f1;
    j["detector"] = std::move(d);

    nlohmann::ordered_json g;
    g["prompts"] = r.prompts;
    g["gated_on"] = r.gated_on;
    g["gated_off"] = r.gated_off;
    g["spans_detected"] = r.spans_detected;
    g["forced_base"] = r.forced_base;
    j["gating"] = std::move(g);
    return j.dump(2);
}

}  // namespace ab::pipe
