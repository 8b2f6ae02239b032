#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "audiobert/checkpoint.hpp"
#include "audiobert/optim.hpp"
#include "audiobert/rng.hpp"
#include "audiobert/tensor.hpp"
#include "testers.hpp"

using namespace ab;
using namespace ab::num;

namespace {

// scalarizes a tensor with fixed pseudo-random weights so the upstream
// gradient of the op under test is non-uniform
Tensor weighted(const Tensor& y, uint64_t seed = 99) {
    Rng rng(seed);
    std::vector<double> w(static_cast<size_t>(y.numel()));
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

}  // namespace

TEST_CASE("rng determinism and distribution bounds") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        int64_t k = r.uniform_int(13);
        CHECK(k >= 0);
        CHECK(k < 13);
    }
    // shuffle is a permutation
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    r.shuffle(v);
    std::set<int> seen(v.begin(), v.end());
    CHECK(seen.size() == 50);
    // normal() roughly centered with unit spread
    Rng g(11);
    double mean = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = g.normal();
        mean += x;
        sq += x * x;
    }
    mean /= n;
    sq = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(sq - 1.0) < 0.05);
}

TEST_CASE("sub_seed separates named streams") {
    CHECK(sub_seed(42, "detector") != sub_seed(42, "clap"));
    CHECK(sub_seed(42, "detector") == sub_seed(42, "detector"));
    CHECK(sub_seed(42, "detector") != sub_seed(43, "detector"));
}

TEST_CASE("matmul forward values") {
    auto i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto p = matmul(i2, m);
    for (int i = 0; i < 4; ++i) CHECK(p.at(i) == doctest::Approx(m.at(i)));

    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
    auto c = matmul(a, b);
    CHECK(c.at(0) == doctest::Approx(19));
    CHECK(c.at(1) == doctest::Approx(22));
    CHECK(c.at(2) == doctest::Approx(43));
    CHECK(c.at(3) == doctest::Approx(50));

    CHECK_THROWS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})));
}

TEST_CASE("matmul gradient of sum equals ones times b transposed") {
    Rng rng(5);
    auto a = Tensor::randn({4, 3}, rng, 1.0, true);
    auto b = Tensor::randn({3, 5}, rng, 1.0, true);
    a.zero_grad();
    b.zero_grad();
    backward(sum(matmul(a, b)));
    // d sum(ab)/da = ones(4,5) . b^T, i.e. row sums of b broadcast
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 3; ++j) {
            double expect = 0.0;
            for (int64_t k = 0; k < 5; ++k) expect += b.at(j * 5 + k);
            CHECK(a.grad()[static_cast<size_t>(i * 3 + j)] == doctest::Approx(expect).epsilon(1e-10));
        }
    double err = abtest::max_grad_rel_err({a, b}, [&] { return sum(matmul(a, b)); });
    CHECK(err < 1e-4);
}

TEST_CASE("softmax values, stability, and row sums") {
    auto u = softmax(Tensor::from({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    auto s = softmax(Tensor::from({3}, {1000, 0, 0}));
    CHECK(abtest::all_finite(s.data()));
    CHECK(s.at(0) == doctest::Approx(1.0).epsilon(1e-12));

    auto e = softmax(Tensor::from({3}, {1, 2, 3}));
    CHECK(e.at(0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
    CHECK(e.at(1) == doctest::Approx(0.24472847105479764).epsilon(1e-12));
    CHECK(e.at(2) == doctest::Approx(0.66524095577482183).epsilon(1e-12));

    Rng rng(3);
    auto x = Tensor::randn({6, 9}, rng, 3.0);
    auto y = softmax(x, 1);
    for (int64_t i = 0; i < 6; ++i) {
        double row = 0.0;
        for (int64_t j = 0; j < 9; ++j) row += y.at(i * 9 + j);
        CHECK(std::abs(row - 1.0) < 1e-12);
    }
    // axis 0 normalizes columns
    auto yc = softmax(x, 0);
    for (int64_t j = 0; j < 9; ++j) {
        double col = 0.0;
        for (int64_t i = 0; i < 6; ++i) col += yc.at(i * 9 + j);
        CHECK(std::abs(col - 1.0) < 1e-12);
    }
}

TEST_CASE("cross entropy values and ignore handling") {
    auto sure = cross_entropy(Tensor::from({1, 2}, {10, -10}), {0});
    CHECK(sure.item() == doctest::Approx(0.0).epsilon(1e-8));

    auto unif = cross_entropy(Tensor::from({2, 5}, std::vector<double>(10, 0.7)), {3, 1});
    CHECK(unif.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    auto ref = cross_entropy(Tensor::from({1, 3}, {1, 2, 3}), {2});
    CHECK(ref.item() == doctest::Approx(0.40760596444438079).epsilon(1e-12));

    // ignored rows carry no loss and no gradient
    auto logits = Tensor::from({2, 3}, {1, 2, 3, 9, 9, 9}, true);
    logits.zero_grad();
    auto l = cross_entropy(logits, {2, kIgnoreId});
    CHECK(l.item() == doctest::Approx(0.40760596444438079).epsilon(1e-12));
    backward(l);
    for (int j = 3; j < 6; ++j) CHECK(logits.grad()[static_cast<size_t>(j)] == 0.0);

    CHECK_THROWS(cross_entropy(Tensor::from({1, 3}, {1, 2, 3}), {kIgnoreId}));
    CHECK_THROWS(cross_entropy(Tensor::from({1, 3}, {1, 2, 3}), {5}));
}

TEST_CASE("backward basics and contract errors") {
    Rng rng(1);
    auto x = Tensor::randn({7}, rng, 1.0, true);
    x.zero_grad();
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

    x.zero_grad();
    backward(sum(mul(x, x)));
    for (int64_t i = 0; i < 7; ++i)
        CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(2.0 * x.at(i)).epsilon(1e-12));

    CHECK_THROWS(backward(Tensor::zeros({3})));
    // leaf grads accumulate across backward calls until zeroed
    x.zero_grad();
    backward(sum(x));
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("gradient check across every differentiable op") {
    Rng rng(21);
    auto a = Tensor::randn({3, 4}, rng, 0.8, true);
    auto b = Tensor::randn({3, 4}, rng, 0.8, true);
    auto w = Tensor::randn({5, 4}, rng, 0.5, true);
    auto bias = Tensor::randn({5}, rng, 0.5, true);

    CHECK(abtest::max_grad_rel_err({a, b}, [&] { return weighted(add(a, b)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a, b}, [&] { return weighted(sub(a, b)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a, b}, [&] { return weighted(mul(a, b)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a}, [&] { return weighted(scale(a, -1.7)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a, w, bias}, [&] { return weighted(linear(a, w, bias)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a}, [&] { return weighted(transpose(a)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a}, [&] { return weighted(slice_rows(a, 1, 3)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a, b}, [&] { return weighted(concat_rows({a, b})); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a}, [&] { return weighted(gather_rows(a, {2, 0, 2, 1})); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a}, [&] { return weighted(gelu(a)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a}, [&] { return weighted(softmax(a, 1)); }) < 1e-4);
    CHECK(abtest::max_grad_rel_err({a}, [&] { return weighted(l2_normalize_rows(a)); }) < 1e-4);

    auto v = Tensor::randn({4}, rng, 0.5, true);
    CHECK(abtest::max_grad_rel_err({a, v}, [&] { return weighted(add_at_row(a, 1, v)); }) < 1e-4);

    auto gamma = Tensor::randn({4}, rng, 0.3, true);
    auto beta = Tensor::randn({4}, rng, 0.3, true);
    CHECK(abtest::max_grad_rel_err({a, gamma, beta},
                                   [&] { return weighted(layer_norm(a, gamma, beta)); }) < 1e-4);

    auto logits = Tensor::randn({5, 6}, rng, 1.0, true);
    std::vector<int> targets = {1, 4, kIgnoreId, 0, 5};
    CHECK(abtest::max_grad_rel_err({logits}, [&] { return cross_entropy(logits, targets); }) < 1e-4);

    auto q = Tensor::randn({4, 6}, rng, 0.7, true);
    auto k = Tensor::randn({4, 6}, rng, 0.7, true);
    auto val = Tensor::randn({4, 6}, rng, 0.7, true);
    const double scal = 1.0 / std::sqrt(3.0);
    CHECK(abtest::max_grad_rel_err({q, k, val},
                                   [&] { return weighted(attention(q, k, val, 2, scal)); }) < 1e-4);
}

TEST_CASE("composite encoder-style graph matches finite differences") {
    Rng rng(31);
    auto x = Tensor::randn({5, 8}, rng, 0.5, true);
    auto wq = Tensor::randn({8, 8}, rng, 0.3, true);
    auto wk = Tensor::randn({8, 8}, rng, 0.3, true);
    auto wv = Tensor::randn({8, 8}, rng, 0.3, true);
    auto wo = Tensor::randn({8, 8}, rng, 0.3, true);
    auto w1 = Tensor::randn({16, 8}, rng, 0.3, true);
    auto b1 = Tensor::randn({16}, rng, 0.1, true);
    auto w2 = Tensor::randn({8, 16}, rng, 0.3, true);
    auto b2 = Tensor::randn({8}, rng, 0.1, true);
    auto g1 = Tensor::full({8}, 1.0, true);
    auto be1 = Tensor::zeros({8}, true);
    auto make_loss = [&] {
        auto h = layer_norm(x, g1, be1);
        auto att = attention(linear(h, wq), linear(h, wk), linear(h, wv), 2, 0.5);
        auto res = add(x, linear(att, wo));
        auto ff = linear(gelu(linear(res, w1, b1)), w2, b2);
        auto out = add(res, ff);
        return weighted(l2_normalize_rows(out));
    };
    std::vector<Tensor> leaves = {x, wq, wk, wv, wo, w1, b1, w2, b2, g1, be1};
    CHECK(abtest::max_grad_rel_err(leaves, make_loss) < 1e-4);
}

TEST_CASE("finiteness on edge inputs") {
    // constant rows: layer norm variance hits the epsilon floor
    auto c = Tensor::full({3, 4}, 2.5);
    auto ln = layer_norm(c, Tensor::full({4}, 1.0), Tensor::zeros({4}));
    CHECK(abtest::all_finite(ln.data()));
    // zero rows: l2 normalization floors the norm
    auto z = l2_normalize_rows(Tensor::zeros({2, 3}));
    CHECK(abtest::all_finite(z.data()));
    // huge logits: stabilized softmax and cross entropy
    auto big = Tensor::from({1, 3}, {5000, -5000, 0});
    CHECK(abtest::all_finite(softmax(big, 1).data()));
    CHECK(std::isfinite(cross_entropy(big, {0}).item()));
}

TEST_CASE("dropout masks, scales, and backpropagates consistently") {
    Rng rng(17);
    auto x = Tensor::full({40, 5}, 1.0, true);
    x.zero_grad();
    auto y = dropout(x, 0.25, rng);
    int kept = 0;
    for (int64_t i = 0; i < y.numel(); ++i) {
        const double v = y.at(i);
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
        if (v != 0.0) ++kept;
    }
    CHECK(kept > 100);
    CHECK(kept < 200);
    backward(sum(y));
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(y.at(i)));
    // rate zero is the identity
    Rng r2(1);
    auto id = dropout(x, 0.0, r2);
    CHECK(id.node().get() == x.node().get());
}

TEST_CASE("adamw closed-form first step and invariants") {
    // zero gradient, zero decay: parameters unchanged
    auto w0 = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    AdamW opt0({w0}, {.lr = 0.1, .weight_decay = 0.0});
    opt0.zero_grad();
    opt0.step();
    CHECK(w0.at(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(w0.at(1) == doctest::Approx(-2.0).epsilon(1e-15));
    CHECK(opt0.step_count() == 1);

    // single scalar, g=1, lr=0.1: first step moves by almost exactly lr
    auto w1 = Tensor::from({1}, {3.0}, true);
    AdamW opt1({w1}, {.lr = 0.1, .weight_decay = 0.0});
    opt1.zero_grad();
    backward(sum(w1));  // gradient 1
    opt1.step();
    CHECK(w1.at(0) == doctest::Approx(3.0 - 0.1).epsilon(1e-7));

    // missing grad is a contract error
    auto w2 = Tensor::from({1}, {1.0}, true);
    AdamW opt2({w2}, {});
    CHECK_THROWS(opt2.step());

    // quadratic bowl: |w| strictly decreases for 200 steps
    auto w = Tensor::from({1}, {1.0}, true);
    AdamW opt({w}, {.lr = 3e-4, .weight_decay = 0.0});
    double prev = std::abs(w.at(0));
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        backward(mul(w, w));
        opt.step();
        const double cur = std::abs(w.at(0));
        CHECK(cur < prev);
        prev = cur;
    }

    // decoupled decay shrinks weights even at zero gradient
    auto wd = Tensor::from({1}, {4.0}, true);
    AdamW optd({wd}, {.lr = 0.1, .weight_decay = 0.5});
    optd.zero_grad();
    optd.step();
    CHECK(wd.at(0) == doctest::Approx(4.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));

    // no-decay group is exempt
    auto wn = Tensor::from({1}, {4.0}, true);
    AdamW optn({}, {wn}, {.lr = 0.1, .weight_decay = 0.5});
    optn.zero_grad();
    optn.step();
    CHECK(wn.at(0) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("gradient clipping rescales to the requested norm") {
    auto a = Tensor::from({2}, {0.0, 0.0}, true);
    a.zero_grad();
    backward(scale(sum(mul(a, a)), 1.0));  // zero grads
    auto b = Tensor::from({2}, {3.0, 4.0}, true);
    b.zero_grad();
    backward(sum(mul(b, b)));  // grads (6, 8), norm 10
    const double norm = clip_grad_norm({a, b}, 5.0);
    CHECK(norm == doctest::Approx(10.0));
    CHECK(b.grad()[0] == doctest::Approx(3.0));
    CHECK(b.grad()[1] == doctest::Approx(4.0));
    const double norm2 = clip_grad_norm({a, b}, 100.0);
    CHECK(norm2 == doctest::Approx(5.0));
    CHECK(b.grad()[0] == doctest::Approx(3.0));  // under the cap: untouched
}

TEST_CASE("deterministic graphs reproduce bit-identical results") {
    auto run = [] {
        Rng rng(77);
        auto x = Tensor::randn({6, 6}, rng, 1.0, true);
        auto w = Tensor::randn({6, 6}, rng, 1.0, true);
        x.zero_grad();
        w.zero_grad();
        auto loss = weighted(attention(linear(x, w), x, x, 3, 0.4));
        backward(loss);
        std::vector<double> out = {loss.item()};
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1 == r2);
}

TEST_CASE("parameter container round trip and auditing") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "ab_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();

    Rng rng(9);
    std::vector<NamedTensor> params = {
        {"enc.w", Tensor::randn({4, 3}, rng, 1.0, true)},
        {"enc.b", Tensor::randn({4}, rng, 1.0, true)},
        {"head.w", Tensor::randn({2, 4}, rng, 1.0, true)},
    };
    save_params(path, params);

    auto loaded = load_params(path);
    REQUIRE(loaded.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i].name == params[i].name);
        CHECK(loaded[i].tensor.shape() == params[i].tensor.shape());
        CHECK(loaded[i].tensor.data() == params[i].tensor.data());
    }
    CHECK(params_fingerprint(loaded) == params_fingerprint(params));

    // subset fill: only matching names are touched
    std::vector<NamedTensor> dst = {
        {"head.w", Tensor::zeros({2, 4}, true)},
        {"extra.w", Tensor::zeros({1}, true)},
    };
    CHECK(load_params_into(path, dst, false) == 1);
    CHECK(dst[0].tensor.data() == params[2].tensor.data());
    CHECK_THROWS(load_params_into(path, dst, true));

    // strict fill requires shape agreement
    std::vector<NamedTensor> wrong = {{"head.w", Tensor::zeros({4, 2}, true)}};
    CHECK_THROWS(load_params_into(path, wrong, true));

    // a flipped payload byte changes the fingerprint
    auto mutated = load_params(path);
    mutated[0].tensor.mutable_data()[0] += 1.0;
    CHECK(params_fingerprint(mutated) != params_fingerprint(params));

    // corrupt magic is rejected
    const std::string bad = (dir / "bad.ckpt").string();
    std::ofstream(bad, std::ios::binary) << "NOPExxxxxxxxxxxxxxxx";
    CHECK_THROWS(load_params(bad));
    fs::remove_all(dir);
}

TEST_CASE("leaf-only mutation contracts") {
    auto x = Tensor::from({2}, {1, 2}, true);
    auto y = add(x, x);
    CHECK_THROWS(Tensor(y).mutable_data());
    CHECK_THROWS(Tensor(y).set_requires_grad(false));
    CHECK_THROWS(Tensor::from({2}, {1, 2, 3}));
    CHECK_THROWS(Tensor().numel());
}
