#include "audiobert/clap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "audiobert/optim.hpp"

namespace ab::clap {

using num::Tensor;

// ---- AudioTower ----

AudioTower::AudioTower(const AudioTowerConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.patch < 1) throw std::invalid_argument("AudioTower: patch must be positive");
    if (cfg.mel_bins % cfg.patch != 0)
        throw std::invalid_argument("AudioTower: mel_bins must be a multiple of patch");
    if (cfg.max_patches < 1) throw std::invalid_argument("AudioTower: max_patches must be positive");
    const int64_t pp = static_cast<int64_t>(cfg.patch) * cfg.patch;
    patch_w_ = Tensor::randn({cfg.d, pp}, rng, 0.02, true);
    patch_b_ = Tensor::zeros({cfg.d}, true);
    pos_emb_ = Tensor::randn({cfg.max_patches, cfg.d}, rng, 0.02, true);
    stack_ = enc::TransformerStack(cfg.layers, cfg.d, cfg.heads, cfg.ffn, 0, 128.0, rng);
}

Tensor AudioTower::patchify(const audio::Spectrogram& mel) const {
    if (mel.bins != cfg_.mel_bins)
        throw std::invalid_argument("AudioTower: spectrogram has " + std::to_string(mel.bins) +
                                    " bins, expected " + std::to_string(cfg_.mel_bins));
    const int64_t p = cfg_.patch;
    const int64_t tile_rows = mel.frames / p;
    const int64_t tile_cols = mel.bins / p;
    if (tile_rows < 1)
        throw std::invalid_argument("AudioTower: clip too short, needs at least " +
                                    std::to_string(p) + " spectrogram frames");
    const int64_t count = tile_rows * tile_cols;
    if (count > cfg_.max_patches)
        throw std::invalid_argument("AudioTower: clip yields " + std::to_string(count) +
                                    " patches, limit " + std::to_string(cfg_.max_patches));
    std::vector<double> out(static_cast<size_t>(count * p * p));
    for (int64_t tr = 0; tr < tile_rows; ++tr)
        for (int64_t tc = 0; tc < tile_cols; ++tc) {
            const int64_t row = tr * tile_cols + tc;
            for (int64_t fl = 0; fl < p; ++fl)
                for (int64_t bl = 0; bl < p; ++bl)
                    out[static_cast<size_t>(row * p * p + fl * p + bl)] =
                        mel.at(tr * p + fl, tc * p + bl);
        }
    return Tensor::from({count, p * p}, std::move(out));
}

Tensor AudioTower::forward(const std::vector<Tensor>& patches) const {
    if (patches.empty()) throw std::invalid_argument("AudioTower: empty batch");
    const int64_t pp = static_cast<int64_t>(cfg_.patch) * cfg_.patch;
    std::vector<int64_t> lens;
    std::vector<Tensor> embedded;
    lens.reserve(patches.size());
    embedded.reserve(patches.size());
    for (const auto& pt : patches) {
        if (pt.ndim() != 2 || pt.cols() != pp)
            throw std::invalid_argument("AudioTower: patch matrix shape mismatch");
        const int64_t n = pt.rows();
        if (n < 1 || n > cfg_.max_patches)
            throw std::invalid_argument("AudioTower: patch count out of range");
        std::vector<int> pos(static_cast<size_t>(n));
        std::iota(pos.begin(), pos.end(), 0);
        embedded.push_back(num::add(num::linear(pt, patch_w_, patch_b_),
                                    num::gather_rows(pos_emb_, pos)));
        lens.push_back(n);
    }
    const Tensor hidden = stack_.forward(num::concat_rows(embedded), lens, false);

    // mean pool each sequence: one pooling row per clip
    const int64_t total = hidden.rows();
    std::vector<double> pool(static_cast<size_t>(lens.size()) * static_cast<size_t>(total), 0.0);
    int64_t offset = 0;
    for (size_t i = 0; i < lens.size(); ++i) {
        const double inv = 1.0 / static_cast<double>(lens[i]);
        for (int64_t r = 0; r < lens[i]; ++r)
            pool[i * static_cast<size_t>(total) + static_cast<size_t>(offset + r)] = inv;
        offset += lens[i];
    }
    const Tensor pool_t = Tensor::from({static_cast<int64_t>(lens.size()), total}, std::move(pool));
    return num::matmul(pool_t, hidden);
}

void AudioTower::collect_params(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + "patch.w", patch_w_});
    out.push_back({prefix + "patch.b", patch_b_});
    out.push_back({prefix + "pos_emb", pos_emb_});
    stack_.collect_params(prefix + "stack.", out);
}

// ---- contrastive loss ----

Tensor contrastive_loss(const Tensor& audio_emb, const Tensor& text_emb, double tau) {
    if (!audio_emb.defined() || !text_emb.defined())
        throw std::invalid_argument("contrastive_loss: undefined input");
    if (audio_emb.ndim() != 2 || text_emb.ndim() != 2 ||
        audio_emb.shape() != text_emb.shape())
        throw std::invalid_argument("contrastive_loss: inputs must be equal-shape 2-D batches");
    if (audio_emb.rows() < 1) throw std::invalid_argument("contrastive_loss: empty batch");
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");

    const Tensor a = num::l2_normalize_rows(audio_emb);
    const Tensor t = num::l2_normalize_rows(text_emb);
    const Tensor sim = num::scale(num::matmul(a, num::transpose(t)), 1.0 / tau);
    std::vector<int> diag(static_cast<size_t>(audio_emb.rows()));
    std::iota(diag.begin(), diag.end(), 0);
    const Tensor loss_audio = num::cross_entropy(sim, diag);
    const Tensor loss_text = num::cross_entropy(num::transpose(sim), diag);
    return num::scale(num::add(loss_audio, loss_text), 0.5);
}

// ---- DualEncoder ----

DualEncoder::DualEncoder(const ClapConfig& cfg, text::Vocabulary vocab)
    : cfg_(cfg), vocab_(std::move(vocab)) {
    if (cfg.embed_dim < 1) throw std::invalid_argument("DualEncoder: embed_dim must be positive");
    if (!(cfg.tau > 0.0)) throw std::invalid_argument("DualEncoder: tau must be positive");
    if (cfg.max_text_positions < 1 || cfg.max_text_positions > text::kMaxSeqLen)
        throw std::invalid_argument("DualEncoder: bad max_text_positions");
    Rng rng(cfg.seed);
    text_tok_emb_ = Tensor::randn({vocab_.size(), cfg.text_d}, rng, 0.02, true);
    text_pos_emb_ = Tensor::randn({cfg.max_text_positions, cfg.text_d}, rng, 0.02, true);
    text_stack_ = enc::TransformerStack(cfg.text_layers, cfg.text_d, cfg.text_heads,
                                        cfg.text_ffn, 0, 128.0, rng);
    text_proj_ = Tensor::randn({cfg.embed_dim, cfg.text_d}, rng, 0.02, true);
    tower_ = AudioTower(cfg.audio, rng);
    audio_proj_ = Tensor::randn({cfg.embed_dim, cfg.audio.d}, rng, 0.02, true);
}

Tensor DualEncoder::text_forward(const std::vector<std::vector<int>>& batch_ids) const {
    if (batch_ids.empty()) throw std::invalid_argument("DualEncoder: empty text batch");
    std::vector<int> flat, pos;
    std::vector<int64_t> lens, starts;
    int64_t offset = 0;
    for (const auto& ids : batch_ids) {
        const auto n = static_cast<int64_t>(ids.size());
        if (n < 1 || n > cfg_.max_text_positions)
            throw std::invalid_argument("DualEncoder: sequence length out of range");
        for (int64_t i = 0; i < n; ++i) {
            const int id = ids[static_cast<size_t>(i)];
            if (id < 0 || id >= vocab_.size())
                throw std::invalid_argument("DualEncoder: token id out of range");
            flat.push_back(id);
            pos.push_back(static_cast<int>(i));
        }
        lens.push_back(n);
        starts.push_back(offset);  // [CLS] row of this sequence
        offset += n;
    }
    const Tensor emb = num::add(num::gather_rows(text_tok_emb_, flat),
                                num::gather_rows(text_pos_emb_, pos));
    const Tensor hidden = text_stack_.forward(emb, lens, false);
    std::vector<int> start_ids(starts.begin(), starts.end());
    const Tensor pooled = num::gather_rows(hidden, start_ids);
    return num::l2_normalize_rows(num::linear(pooled, text_proj_));
}

Tensor DualEncoder::audio_forward(const std::vector<Tensor>& patches) const {
    return num::l2_normalize_rows(num::linear(tower_.forward(patches), audio_proj_));
}

std::vector<double> DualEncoder::embed_text(const std::string& text) const {
    const auto prompt = text::tokenize(text, vocab_);
    return text_forward({prompt.ids}).data();
}

std::vector<double> DualEncoder::embed_audio(const audio::AudioClip& clip) const {
    return audio_forward({tower_.patchify(features(clip))}).data();
}

audio::Spectrogram DualEncoder::features(const audio::AudioClip& clip) const {
    return audio::logmel(clip, cfg_.audio.mel_bins);
}

std::vector<NamedTensor> DualEncoder::params() const {
    std::vector<NamedTensor> out;
    out.push_back({"text.tok_emb", text_tok_emb_});
    out.push_back({"text.pos_emb", text_pos_emb_});
    text_stack_.collect_params("text.stack.", out);
    out.push_back({"text.proj.w", text_proj_});
    tower_.collect_params("audio.", out);
    out.push_back({"audio.proj.w", audio_proj_});
    return out;
}

namespace {

std::vector<double> pack_config(const ClapConfig& c) {
    return {static_cast<double>(c.text_layers),  static_cast<double>(c.text_d),
            static_cast<double>(c.text_heads),   static_cast<double>(c.text_ffn),
            static_cast<double>(c.max_text_positions),
            static_cast<double>(c.audio.layers), static_cast<double>(c.audio.d),
            static_cast<double>(c.audio.heads),  static_cast<double>(c.audio.ffn),
            static_cast<double>(c.audio.mel_bins), static_cast<double>(c.audio.patch),
            static_cast<double>(c.audio.max_patches),
            static_cast<double>(c.embed_dim),    c.tau};
}

ClapConfig unpack_config(const std::vector<double>& v) {
    if (v.size() != 14) throw std::runtime_error("DualEncoder: bad config record");
    ClapConfig c;
    c.text_layers = static_cast<int>(v[0]);
    c.text_d = static_cast<int>(v[1]);
    c.text_heads = static_cast<int>(v[2]);
    c.text_ffn = static_cast<int>(v[3]);
    c.max_text_positions = static_cast<int>(v[4]);
    c.audio.layers = static_cast<int>(v[5]);
    c.audio.d = static_cast<int>(v[6]);
    c.audio.heads = static_cast<int>(v[7]);
    c.audio.ffn = static_cast<int>(v[8]);
    c.audio.mel_bins = static_cast<int>(v[9]);
    c.audio.patch = static_cast<int>(v[10]);
    c.audio.max_patches = static_cast<int>(v[11]);
    c.embed_dim = static_cast<int>(v[12]);
    c.tau = v[13];
    return c;
}

}  // namespace

void DualEncoder::save(const std::string& path) const {
    auto entries = params();
    auto meta = pack_config(cfg_);
    entries.push_back({"meta.cfg", Tensor::from({static_cast<int64_t>(meta.size())}, meta)});
    num::save_params(path, entries);
    vocab_.save(path + ".vocab");
}

DualEncoder DualEncoder::load(const std::string& path) {
    const auto entries = num::load_params(path);
    const auto meta = std::find_if(entries.begin(), entries.end(),
                                   [](const NamedTensor& e) { return e.name == "meta.cfg"; });
    if (meta == entries.end()) throw std::runtime_error(path + ": missing config record");
    const ClapConfig cfg = unpack_config(meta->tensor.data());
    DualEncoder model(cfg, text::Vocabulary::load(path + ".vocab"));
    auto dst = model.params();
    num::load_params_into(path, dst);
    return model;
}

// ---- training ----

ClapTrainResult train_clap(const std::vector<ClapPair>& pairs, const ClapTrainOptions& opt) {
    if (opt.epochs < 1) throw std::invalid_argument("train_clap: epochs must be positive");
    if (opt.batch < 2) throw std::invalid_argument("train_clap: batch must be at least 2");
    if (!(opt.lr > 0.0)) throw std::invalid_argument("train_clap: lr must be positive");
    if (pairs.size() < 2 * static_cast<size_t>(opt.batch))
        throw std::invalid_argument("train_clap: need at least 2*batch pairs, have " +
                                    std::to_string(pairs.size()));

    std::vector<std::string> captions;
    captions.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.caption.empty()) throw std::invalid_argument("train_clap: empty caption");
        captions.push_back(p.caption);
    }

    ClapConfig cfg = opt.config;
    cfg.seed = sub_seed(opt.seed, "clap.init");
    DualEncoder model(cfg, text::Vocabulary::build(captions));

    // features and token ids are fixed across epochs; extract once
    std::vector<Tensor> patch_mats;
    std::vector<std::vector<int>> token_ids;
    patch_mats.reserve(pairs.size());
    token_ids.reserve(pairs.size());
    for (const auto& p : pairs) {
        patch_mats.push_back(model.tower().patchify(model.features(p.clip)));
        token_ids.push_back(text::tokenize(p.caption, model.vocabulary()).ids);
    }

    const auto named = model.params();
    auto [decay, no_decay] = enc::split_decay(named);
    std::vector<Tensor> all;
    all.reserve(named.size());
    for (const auto& e : named) all.push_back(e.tensor);
    num::AdamWOptions adam;
    adam.lr = opt.lr;
    adam.weight_decay = opt.weight_decay;
    num::AdamW optimizer(decay, no_decay, adam);

    Rng shuffle_rng(sub_seed(opt.seed, "clap.shuffle"));
    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), size_t{0});

    ClapTrainResult result{std::move(model), {}};
    const size_t steps = pairs.size() / static_cast<size_t>(opt.batch);
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double total = 0.0;
        for (size_t s = 0; s < steps; ++s) {
            std::vector<Tensor> batch_patches;
            std::vector<std::vector<int>> batch_ids;
            for (int b = 0; b < opt.batch; ++b) {
                const size_t idx = order[s * static_cast<size_t>(opt.batch) + static_cast<size_t>(b)];
                batch_patches.push_back(patch_mats[idx]);
                batch_ids.push_back(token_ids[idx]);
            }
            const Tensor a = result.model.audio_forward(batch_patches);
            const Tensor t = result.model.text_forward(batch_ids);
            const Tensor loss = contrastive_loss(a, t, cfg.tau);
            optimizer.zero_grad();
            num::backward(loss);
            num::clip_grad_norm(all, opt.clip_norm);
            optimizer.step();
            total += loss.item();
        }
        result.epoch_loss.push_back(total / static_cast<double>(steps));
    }
    return result;
}

}  // namespace ab::clap
