#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "audiobert/encoder.hpp"
#include "audiobert/optim.hpp"
#include "testers.hpp"

using namespace ab;
using namespace ab::enc;
using num::Tensor;

namespace {

EncoderConfig tiny_config(int lora_rank = 0) {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.d = 32;
    cfg.heads = 4;
    cfg.ffn = 64;
    cfg.vocab = 40;
    cfg.max_positions = 16;
    cfg.seed = 5;
    cfg.lora_rank = lora_rank;
    return cfg;
}

}  // namespace

TEST_CASE("encoder shapes and input validation") {
    Encoder enc(tiny_config());
    auto h = enc.encode({1, 5, 9, 3});
    CHECK(h.shape() == num::Shape{4, 32});
    CHECK(enc.mlm_logits(h).shape() == num::Shape{4, 40});
    CHECK(enc.tag_logits(h).shape() == num::Shape{4, 2});
    CHECK(abtest::all_finite(h.data()));

    CHECK_THROWS(enc.encode({}));
    CHECK_THROWS(enc.encode({40}));
    CHECK_THROWS(enc.encode({-1}));
    CHECK_THROWS(enc.encode(std::vector<int>(17, 1)));
}

TEST_CASE("deterministic construction and forward") {
    Encoder a(tiny_config()), b(tiny_config());
    auto ha = a.encode({2, 7, 1});
    auto hb = b.encode({2, 7, 1});
    CHECK(ha.data() == hb.data());
}

TEST_CASE("fresh adapters change nothing until B moves") {
    Encoder base(tiny_config(0));
    Encoder lora(tiny_config(8));
    // same seed draws: constructions differ (lora consumes extra randomness),
    // so compare within the lora model instead: enabled vs disabled at init
    lora.set_adapters(false);
    auto off = lora.encode({3, 8, 2, 11});
    lora.set_adapters(true);
    auto on = lora.encode({3, 8, 2, 11});
    CHECK(off.data() == on.data());  // B = 0 forces exact equality

    // toggling many times has no side effects on parameters
    auto before = num::params_fingerprint(lora.params());
    for (int i = 0; i < 1000; ++i) lora.set_adapters(i % 2 == 0);
    CHECK(num::params_fingerprint(lora.params()) == before);
    lora.set_adapters(false);
    CHECK(lora.encode({3, 8, 2, 11}).data() == off.data());

    // once B is nonzero, enabled and disabled diverge, but disabled output
    // is still independent of adapter values
    for (auto& p : lora.lora_params())
        if (p.name.find(".lora.b") != std::string::npos)
            for (auto& v : p.tensor.mutable_data()) v = 0.3;
    lora.set_adapters(true);
    auto on2 = lora.encode({3, 8, 2, 11});
    CHECK(on2.data() != off.data());
    lora.set_adapters(false);
    CHECK(lora.encode({3, 8, 2, 11}).data() == off.data());
    (void)base;
}

TEST_CASE("lora rank clamps to the hidden dimension") {
    auto cfg = tiny_config(64);  // d = 32 < requested rank
    Encoder enc(cfg);
    for (const auto& p : enc.lora_params()) {
        if (p.name.find(".lora.a") != std::string::npos) CHECK(p.tensor.dim(0) == 32);
        if (p.name.find(".lora.b") != std::string::npos) CHECK(p.tensor.dim(1) == 32);
    }
    // scaling honors the clamp: alpha / effective rank
    Encoder small(tiny_config(8));
    auto probe = [](Encoder& e) {
        size_t n = 0;
        for (const auto& p : e.lora_params()) n += static_cast<size_t>(p.tensor.numel());
        return n;
    };
    CHECK(probe(enc) > probe(small));
}

TEST_CASE("token permutation with zeroed positions permutes outputs") {
    auto cfg = tiny_config();
    cfg.layers = 1;
    Encoder enc(cfg);
    // zero positional table so the stack sees position-free embeddings
    for (auto& p : enc.base_params())
        if (p.name == "pos_emb")
            for (auto& v : p.tensor.mutable_data()) v = 0.0;
    auto h1 = enc.encode({4, 9, 13, 6});
    auto h2 = enc.encode({4, 13, 9, 6});
    const int64_t d = 32;
    for (int64_t j = 0; j < d; ++j) {
        CHECK(h1.at(1 * d + j) == doctest::Approx(h2.at(2 * d + j)).epsilon(1e-12));
        CHECK(h1.at(2 * d + j) == doctest::Approx(h2.at(1 * d + j)).epsilon(1e-12));
        CHECK(h1.at(0 * d + j) == doctest::Approx(h2.at(0 * d + j)).epsilon(1e-12));
    }
}

TEST_CASE("stacked batch forward equals per-sequence forward") {
    Encoder enc(tiny_config(4));
    enc.set_adapters(true);
    for (auto& p : enc.lora_params())
        for (auto& v : p.tensor.mutable_data()) v = 0.05;
    std::vector<std::vector<int>> batch = {{1, 2, 3}, {7, 8}, {9, 10, 11, 12}};
    std::vector<int64_t> lens;
    auto emb = enc.embed_batch(batch, lens);
    CHECK(lens == std::vector<int64_t>{3, 2, 4});
    auto h = enc.encode_embedded(emb, lens);
    int64_t off = 0;
    for (const auto& seq : batch) {
        auto hs = enc.encode(seq);
        for (int64_t i = 0; i < hs.numel(); ++i)
            CHECK(hs.at(i) == doctest::Approx(h.at(off * 32 + i)).epsilon(1e-12));
        off += static_cast<int64_t>(seq.size());
    }
}

TEST_CASE("tied mlm head tracks embedding updates") {
    Encoder enc(tiny_config());
    auto h = enc.encode({1, 2, 3});
    auto logits = enc.mlm_logits(h);
    // bump one embedding component; the corresponding logit column must move
    for (auto& p : enc.params())
        if (p.name == "tok_emb") p.tensor.mutable_data()[static_cast<size_t>(7 * 32 + 4)] += 0.5;
    auto logits2 = enc.mlm_logits(h);
    bool moved = false;
    for (int64_t t = 0; t < 3; ++t)
        if (std::abs(logits2.at(t * 40 + 7) - logits.at(t * 40 + 7)) > 1e-9) moved = true;
    CHECK(moved);
}

TEST_CASE("full encoder gradient check at small scale") {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.ffn = 16;
    cfg.vocab = 12;
    cfg.max_positions = 8;
    cfg.seed = 11;
    cfg.lora_rank = 4;
    Encoder enc(cfg);
    enc.set_adapters(true);
    // nonzero B so the adapter path contributes to gradients
    for (auto& p : enc.lora_params())
        if (p.name.find(".lora.b") != std::string::npos)
            for (auto& v : p.tensor.mutable_data()) v = 0.05;

    const std::vector<int> ids = {1, 5, 3, 9};
    const std::vector<int> targets = {num::kIgnoreId, 4, num::kIgnoreId, 2};
    auto make_loss = [&] { return num::cross_entropy(enc.mlm_logits(enc.encode(ids)), targets); };

    std::vector<Tensor> leaves;
    for (const auto& p : enc.params()) leaves.push_back(p.tensor);
    CHECK(abtest::max_grad_rel_err(leaves, make_loss) < 1e-4);
}

TEST_CASE("mlm training drives loss down on a memorizable pattern") {
    EncoderConfig cfg = tiny_config();
    cfg.seed = 3;
    Encoder enc(cfg);
    const std::vector<std::vector<int>> inputs = {{1, 3, 5, 7}, {2, 3, 6, 7}, {1, 4, 5, 8}};
    const std::vector<std::vector<int>> labels = {{num::kIgnoreId, 9, num::kIgnoreId, num::kIgnoreId},
                                                  {num::kIgnoreId, 10, num::kIgnoreId, num::kIgnoreId},
                                                  {num::kIgnoreId, 11, num::kIgnoreId, num::kIgnoreId}};
    auto [decay, nodecay] = split_decay(enc.base_params());
    num::AdamW opt(decay, nodecay, {.lr = 3e-3});
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 60; ++step) {
        std::vector<int64_t> lens;
        auto emb = enc.embed_batch(inputs, lens);
        auto h = enc.encode_embedded(emb, lens);
        std::vector<int> flat;
        for (const auto& l : labels) flat.insert(flat.end(), l.begin(), l.end());
        auto loss = num::cross_entropy(enc.mlm_logits(h), flat);
        opt.zero_grad();
        num::backward(loss);
        opt.step();
        if (step == 0) first = loss.item();
        last = loss.item();
    }
    CHECK(last < 0.25 * first);
}

TEST_CASE("trainability toggles work through the optimizer") {
    Encoder enc(tiny_config(4));
    set_trainable(enc.base_params(), false);
    auto before = num::params_fingerprint(enc.base_params());
    enc.set_adapters(true);
    for (auto& p : enc.lora_params())
        if (p.name.find(".lora.b") != std::string::npos)
            for (auto& v : p.tensor.mutable_data()) v = 0.01;

    auto [decay, nodecay] = split_decay(enc.lora_params());
    num::AdamW opt(decay, nodecay, {.lr = 1e-2});
    for (int step = 0; step < 5; ++step) {
        auto loss = num::cross_entropy(enc.mlm_logits(enc.encode({1, 2, 3})), {5, num::kIgnoreId, 6});
        opt.zero_grad();
        num::backward(loss);
        opt.step();
    }
    CHECK(num::params_fingerprint(enc.base_params()) == before);
    set_trainable(enc.base_params(), true);
}
