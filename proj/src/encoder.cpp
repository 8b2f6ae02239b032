#include "audiobert/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace ab::enc {

namespace {

constexpr double kInitStd = 0.02;

AdaptedLinear make_linear(int out, int in, int lora_rank, double lora_alpha, Rng& rng) {
    AdaptedLinear l;
    l.w = Tensor::randn({out, in}, rng, kInitStd, true);
    l.bias = Tensor::zeros({out}, true);
    if (lora_rank > 0) {
        const int r = std::min(lora_rank, std::min(out, in));
        LoraAdapter a;
        a.a = Tensor::randn({r, in}, rng, kInitStd, true);
        a.b = Tensor::zeros({out, r}, true);
        a.scaling = lora_alpha / static_cast<double>(r);
        l.lora = std::move(a);
    }
    return l;
}

void put(std::vector<NamedTensor>& out, const std::string& name, const Tensor& t) {
    out.push_back({name, t});
}

void put_linear(std::vector<NamedTensor>& out, const std::string& prefix, const AdaptedLinear& l) {
    put(out, prefix + ".w", l.w);
    put(out, prefix + ".b", l.bias);
    if (l.lora) {
        put(out, prefix + ".lora.a", l.lora->a);
        put(out, prefix + ".lora.b", l.lora->b);
    }
}

}  // namespace

Tensor AdaptedLinear::forward(const Tensor& x, bool adapters_enabled) const {
    Tensor y = num::linear(x, w, bias);
    if (adapters_enabled && lora)
        y = num::add(y, num::scale(num::linear(num::linear(x, lora->a), lora->b), lora->scaling));
    return y;
}

TransformerStack::TransformerStack(int layers, int d, int heads, int ffn, int lora_rank,
                                   double lora_alpha, Rng& rng)
    : d_(d), heads_(heads) {
    if (layers < 1 || d < 1 || heads < 1 || ffn < 1)
        throw std::invalid_argument("TransformerStack: extents must be positive");
    if (d % heads != 0) throw std::invalid_argument("TransformerStack: d must divide by heads");
    layers_.reserve(static_cast<size_t>(layers));
    for (int i = 0; i < layers; ++i) {
        EncoderLayer l;
        l.ln1_g = Tensor::full({d}, 1.0, true);
        l.ln1_b = Tensor::zeros({d}, true);
        l.ln2_g = Tensor::full({d}, 1.0, true);
        l.ln2_b = Tensor::zeros({d}, true);
        l.q = make_linear(d, d, lora_rank, lora_alpha, rng);
        l.k = make_linear(d, d, 0, 0.0, rng);
        l.v = make_linear(d, d, lora_rank, lora_alpha, rng);
        l.o = make_linear(d, d, 0, 0.0, rng);
        l.w1 = Tensor::randn({ffn, d}, rng, kInitStd, true);
        l.b1 = Tensor::zeros({ffn}, true);
        l.w2 = Tensor::randn({d, ffn}, rng, kInitStd, true);
        l.b2 = Tensor::zeros({d}, true);
        layers_.push_back(std::move(l));
    }
    final_g = Tensor::full({d}, 1.0, true);
    final_b = Tensor::zeros({d}, true);
}

Tensor TransformerStack::forward(const Tensor& x, const std::vector<int64_t>& lens,
                                 bool adapters_enabled, double dropout, Rng* dropout_rng) const {
    if (layers_.empty()) throw std::runtime_error("TransformerStack: uninitialized");
    if (x.ndim() != 2 || x.dim(1) != d_)
        throw std::invalid_argument("TransformerStack: input width mismatch");
    int64_t total = 0;
    for (int64_t l : lens) {
        if (l < 1) throw std::invalid_argument("TransformerStack: empty sequence");
        total += l;
    }
    if (total != x.dim(0)) throw std::invalid_argument("TransformerStack: lens do not cover input rows");

    const double scal = 1.0 / std::sqrt(static_cast<double>(d_ / heads_));
    const bool drop = dropout > 0.0 && dropout_rng != nullptr;
    Tensor h = x;
    for (const auto& layer : layers_) {
        Tensor n1 = num::layer_norm(h, layer.ln1_g, layer.ln1_b);
        Tensor q = layer.q.forward(n1, adapters_enabled);
        Tensor k = layer.k.forward(n1, adapters_enabled);
        Tensor v = layer.v.forward(n1, adapters_enabled);
        std::vector<Tensor> heads_out;
        heads_out.reserve(lens.size());
        int64_t off = 0;
        for (int64_t len : lens) {
            heads_out.push_back(num::attention(num::slice_rows(q, off, off + len),
                                               num::slice_rows(k, off, off + len),
                                               num::slice_rows(v, off, off + len), heads_, scal));
            off += len;
        }
        Tensor att = lens.size() == 1 ? heads_out[0] : num::concat_rows(heads_out);
        Tensor proj = layer.o.forward(att, adapters_enabled);
        if (drop) proj = num::dropout(proj, dropout, *dropout_rng);
        h = num::add(h, proj);

        Tensor n2 = num::layer_norm(h, layer.ln2_g, layer.ln2_b);
        Tensor ff = num::linear(num::gelu(num::linear(n2, layer.w1, layer.b1)), layer.w2, layer.b2);
        if (drop) ff = num::dropout(ff, dropout, *dropout_rng);
        h = num::add(h, ff);
    }
    return num::layer_norm(h, final_g, final_b);
}

void TransformerStack::collect_params(const std::string& prefix, std::vector<NamedTensor>& out) const {
    for (size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const std::string p = prefix + ".l" + std::to_string(i);
        put(out, p + ".ln1.g", l.ln1_g);
        put(out, p + ".ln1.b", l.ln1_b);
        put_linear(out, p + ".attn.q", l.q);
        put_linear(out, p + ".attn.k", l.k);
        put_linear(out, p + ".attn.v", l.v);
        put_linear(out, p + ".attn.o", l.o);
        put(out, p + ".ln2.g", l.ln2_g);
        put(out, p + ".ln2.b", l.ln2_b);
        put(out, p + ".ffn.w1", l.w1);
        put(out, p + ".ffn.b1", l.b1);
        put(out, p + ".ffn.w2", l.w2);
        put(out, p + ".ffn.b2", l.b2);
    }
    put(out, prefix + ".final.g", final_g);
    put(out, prefix + ".final.b", final_b);
}

Encoder::Encoder(EncoderConfig cfg) : cfg_(cfg) {
    if (cfg.vocab < 1) throw std::invalid_argument("Encoder: vocab must be positive");
    if (cfg.max_positions < 1) throw std::invalid_argument("Encoder: max_positions must be positive");
    Rng rng(cfg.seed);
    tok_emb_ = Tensor::randn({cfg.vocab, cfg.d}, rng, kInitStd, true);
    pos_emb_ = Tensor::randn({cfg.max_positions, cfg.d}, rng, kInitStd, true);
    mlm_bias_ = Tensor::zeros({cfg.vocab}, true);
    tag_w_ = Tensor::randn({2, cfg.d}, rng, kInitStd, true);
    tag_b_ = Tensor::zeros({2}, true);
    stack_ = TransformerStack(cfg.layers, cfg.d, cfg.heads, cfg.ffn, cfg.lora_rank, cfg.lora_alpha, rng);
}

Tensor Encoder::embed(const std::vector<int>& ids) const {
    if (ids.empty()) throw std::invalid_argument("Encoder::embed: empty sequence");
    if (static_cast<int>(ids.size()) > cfg_.max_positions)
        throw std::invalid_argument("Encoder::embed: sequence exceeds max positions");
    for (int id : ids)
        if (id < 0 || id >= cfg_.vocab) throw std::invalid_argument("Encoder::embed: token id out of range");
    std::vector<int> positions(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    return num::add(num::gather_rows(tok_emb_, ids), num::gather_rows(pos_emb_, positions));
}

Tensor Encoder::embed_batch(const std::vector<std::vector<int>>& batch, std::vector<int64_t>& lens) const {
    if (batch.empty()) throw std::invalid_argument("Encoder::embed_batch: empty batch");
    lens.clear();
    std::vector<int> ids, positions;
    for (const auto& seq : batch) {
        if (seq.empty()) throw std::invalid_argument("Encoder::embed_batch: empty sequence");
        if (static_cast<int>(seq.size()) > cfg_.max_positions)
            throw std::invalid_argument("Encoder::embed_batch: sequence exceeds max positions");
        for (size_t i = 0; i < seq.size(); ++i) {
            if (seq[i] < 0 || seq[i] >= cfg_.vocab)
                throw std::invalid_argument("Encoder::embed_batch: token id out of range");
            ids.push_back(seq[i]);
            positions.push_back(static_cast<int>(i));
        }
        lens.push_back(static_cast<int64_t>(seq.size()));
    }
    return num::add(num::gather_rows(tok_emb_, ids), num::gather_rows(pos_emb_, positions));
}

Tensor Encoder::encode_embedded(const Tensor& emb, const std::vector<int64_t>& lens,
                                Rng* dropout_rng) const {
    return stack_.forward(emb, lens, adapters_on_, cfg_.dropout, dropout_rng);
}

Tensor Encoder::encode(const std::vector<int>& ids) const {
    return encode_embedded(embed(ids), {static_cast<int64_t>(ids.size())});
}

Tensor Encoder::mlm_logits(const Tensor& hidden) const {
    return num::add_bias(num::linear(hidden, tok_emb_), mlm_bias_);
}

Tensor Encoder::tag_logits(const Tensor& hidden) const {
    return num::linear(hidden, tag_w_, tag_b_);
}

std::vector<NamedTensor> Encoder::params() const {
    std::vector<NamedTensor> out = base_params();
    for (auto& p : lora_params()) out.push_back(std::move(p));
    for (auto& p : tag_params()) out.push_back(std::move(p));
    return out;
}

std::vector<NamedTensor> Encoder::base_params() const {
    std::vector<NamedTensor> all;
    put(all, "tok_emb", tok_emb_);
    put(all, "pos_emb", pos_emb_);
    put(all, "mlm_bias", mlm_bias_);
    stack_.collect_params("stack", all);
    std::vector<NamedTensor> out;
    for (auto& p : all)
        if (p.name.find(".lora.") == std::string::npos) out.push_back(std::move(p));
    return out;
}

std::vector<NamedTensor> Encoder::lora_params() const {
    std::vector<NamedTensor> all, out;
    stack_.collect_params("stack", all);
    for (auto& p : all)
        if (p.name.find(".lora.") != std::string::npos) out.push_back(std::move(p));
    return out;
}

std::vector<NamedTensor> Encoder::tag_params() const {
    std::vector<NamedTensor> out;
    put(out, "tag.w", tag_w_);
    put(out, "tag.b", tag_b_);
    return out;
}

std::pair<std::vector<Tensor>, std::vector<Tensor>> split_decay(const std::vector<NamedTensor>& params) {
    std::pair<std::vector<Tensor>, std::vector<Tensor>> groups;
    for (const auto& p : params) {
        if (p.tensor.ndim() >= 2)
            groups.first.push_back(p.tensor);
        else
            groups.second.push_back(p.tensor);
    }
    return groups;
}

void set_trainable(const std::vector<NamedTensor>& params, bool trainable) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.set_requires_grad(trainable);
    }
}

}  // namespace ab::enc
