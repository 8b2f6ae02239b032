#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "audiobert/checkpoint.hpp"
#include "audiobert/rng.hpp"
#include "audiobert/tensor.hpp"

namespace ab::enc {

using num::NamedTensor;
using num::Tensor;

struct EncoderConfig {
    int layers = 4;
    int d = 128;
    int heads = 4;
    int ffn = 512;
    int vocab = 0;
    int max_positions = 64;
    double dropout = 0.0;
    uint64_t seed = 0;
    // LoRA attachment on attention query/value projections; rank 0 means no
    // adapters. The effective rank is clamped to min(rank, d).
    int lora_rank = 0;
    double lora_alpha = 128.0;
};

struct LoraAdapter {
    Tensor a;        // [r, in], N(0, 0.02^2)
    Tensor b;        // [out, r], zero — enabled and disabled paths coincide at init
    double scaling;  // alpha / r
};

// Linear map with an optional low-rank bypass:
//   y = W x + b            when the adapter is absent or disabled
//   y = W x + b + s B(A x) when enabled
struct AdaptedLinear {
    Tensor w;
    Tensor bias;
    std::optional<LoraAdapter> lora;

    Tensor forward(const Tensor& x, bool adapters_enabled) const;
};

struct EncoderLayer {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    AdaptedLinear q, k, v, o;
    Tensor w1, b1, w2, b2;
};

// Pre-LN transformer over stacked sequences: `x` holds the rows of one or
// more sequences back to back and `lens` partitions them; attention never
// crosses a sequence boundary. Ends with a final layer norm.
class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(int layers, int d, int heads, int ffn, int lora_rank, double lora_alpha, Rng& rng);

    Tensor forward(const Tensor& x, const std::vector<int64_t>& lens, bool adapters_enabled,
                   double dropout = 0.0, Rng* dropout_rng = nullptr) const;

    void collect_params(const std::string& prefix, std::vector<NamedTensor>& out) const;
    int d() const { return d_; }

private:
    std::vector<EncoderLayer> layers_;
    Tensor final_g, final_b;
    int d_ = 0;
    int heads_ = 0;
};

// Token encoder with tied masked-LM head and a token-classification head.
class Encoder {
public:
    explicit Encoder(EncoderConfig cfg);

    const EncoderConfig& config() const { return cfg_; }

    // token + position embeddings, before any transformer layer — the hook
    // where audio embeddings are injected
    Tensor embed(const std::vector<int>& ids) const;
    Tensor embed_batch(const std::vector<std::vector<int>>& batch, std::vector<int64_t>& lens) const;

    Tensor encode_embedded(const Tensor& emb, const std::vector<int64_t>& lens,
                           Rng* dropout_rng = nullptr) const;
    Tensor encode(const std::vector<int>& ids) const;

    Tensor mlm_logits(const Tensor& hidden) const;  // [T,d] -> [T,V], weight tied to embedding
    Tensor tag_logits(const Tensor& hidden) const;  // [T,d] -> [T,2]

    void set_adapters(bool enabled) { adapters_on_ = enabled; }
    bool adapters_enabled() const { return adapters_on_; }

    // named parameter groups; adapter names carry the ".lora." infix
    std::vector<NamedTensor> params() const;       // everything
    std::vector<NamedTensor> base_params() const;  // embeddings + stack + mlm bias
    std::vector<NamedTensor> lora_params() const;
    std::vector<NamedTensor> tag_params() const;

private:
    EncoderConfig cfg_;
    Tensor tok_emb_;   // [V, d]
    Tensor pos_emb_;   // [max_positions, d]
    Tensor mlm_bias_;  // [V]
    Tensor tag_w_, tag_b_;
    TransformerStack stack_;
    bool adapters_on_ = false;
};

// Splits parameters into weight-decay and no-decay groups (matrices decay;
// vectors — biases, norms, embedding-free 1-D tensors — do not).
std::pair<std::vector<Tensor>, std::vector<Tensor>> split_decay(const std::vector<NamedTensor>& params);

// Marks every tensor in the group (non-)trainable.
void set_trainable(const std::vector<NamedTensor>& params, bool trainable);

}  // namespace ab::enc
