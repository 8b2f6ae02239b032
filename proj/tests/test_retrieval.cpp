#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "audiobert/retrieval.hpp"
#include "audiobert/rng.hpp"
#include "testers.hpp"

using ab::retr::Index;
using ab::retr::IndexEntry;

namespace {

std::vector<double> unit_vec(ab::Rng& rng, int dim) {
    std::vector<double> v(static_cast<size_t>(dim));
    double sq = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& x : v) x *= inv;
    return v;
}

std::string padded_id(size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%04zu", i);
    return buf;
}

Index random_index(ab::Rng& rng, size_t count, int dim) {
    Index idx(dim);
    for (size_t i = 0; i < count; ++i) idx.add({padded_id(i), unit_vec(rng, dim)});
    idx.freeze();
    return idx;
}

std::string temp_path(const char* name) {
    return std::string("retr_test_") + name + ".abix";
}

}  // namespace

TEST_CASE("topk matches a brute-force oracle on 500 entries x 100 queries") {
    ab::Rng rng(20240601);
    const int dim = 32;
    const size_t count = 500;
    Index idx = random_index(rng, count, dim);

    std::vector<std::vector<double>> corpus;
    corpus.reserve(count);
    for (size_t i = 0; i < count; ++i) corpus.push_back(idx.entry(i).embedding);

    for (int q = 0; q < 100; ++q) {
        const auto query = unit_vec(rng, dim);
        const size_t k = 1 + static_cast<size_t>(rng.uniform_int(10));
        const auto hits = idx.topk(query, k);
        // padded ids sort in index order, so the oracle's index tie rule and
        // the library's clip_id tie rule agree
        const auto want = abtest::brute_force_topk(query, corpus, k);
        REQUIRE(hits.size() == want.size());
        for (size_t i = 0; i < hits.size(); ++i) {
            CHECK(hits[i].clip_id == padded_id(want[i]));
            CHECK(hits[i].cosine >= -1.0);
            CHECK(hits[i].cosine <= 1.0);
            double dot = 0.0;
            for (int d = 0; d < dim; ++d)
                dot += query[static_cast<size_t>(d)] * corpus[want[i]][static_cast<size_t>(d)];
            CHECK(abtest::rel_err(hits[i].cosine, dot) < 1e-12);
        }
        for (size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].cosine >= hits[i].cosine);
    }
}

TEST_CASE("ties broken by ascending clip_id") {
    Index idx(2);
    // three entries with identical cosine against (1, 0), added out of order
    idx.add({"zebra", {1.0, 0.0}});
    idx.add({"apple", {1.0, 0.0}});
    idx.add({"mango", {1.0, 0.0}});
    idx.add({"decoy", {0.0, 1.0}});
    idx.freeze();
    const auto hits = idx.topk({1.0, 0.0}, 4);
    REQUIRE(hits.size() == 4);
    CHECK(hits[0].clip_id == "apple");
    CHECK(hits[1].clip_id == "mango");
    CHECK(hits[2].clip_id == "zebra");
    CHECK(hits[3].clip_id == "decoy");
}

TEST_CASE("k larger than index returns everything, k=0 and empty index throw") {
    ab::Rng rng(7);
    Index idx = random_index(rng, 5, 8);
    const auto hits = idx.topk(unit_vec(rng, 8), 50);
    CHECK(hits.size() == 5);
    CHECK_THROWS_AS((void)idx.topk(unit_vec(rng, 8), 0), std::invalid_argument);

    Index empty(8);
    empty.freeze();
    CHECK_THROWS_AS((void)empty.topk(unit_vec(rng, 8), 1), std::runtime_error);
}

TEST_CASE("add validates norm, dimension, duplicates, and freeze state") {
    Index idx(4);
    idx.add({"a", {1.0, 0.0, 0.0, 0.0}});
    CHECK_THROWS_AS(idx.add({"b", {2.0, 0.0, 0.0, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(idx.add({"b", {1.0, 0.0, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(idx.add({"a", {0.0, 1.0, 0.0, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(idx.add({"", {0.0, 1.0, 0.0, 0.0}}), std::invalid_argument);
    // norm off by more than 1e-9 rejected, within 1e-9 accepted
    const double eps = 5e-10;
    idx.add({"near", {1.0 + eps, 0.0, 0.0, 0.0}});
    CHECK_THROWS_AS(idx.add({"far", {1.0 + 1e-8, 0.0, 0.0, 0.0}}), std::invalid_argument);
    idx.freeze();
    CHECK_THROWS_AS(idx.add({"c", {0.0, 1.0, 0.0, 0.0}}), std::runtime_error);
}

TEST_CASE("save/load round-trips ids, dims, and exact embedding bytes") {
    ab::Rng rng(123);
    Index idx = random_index(rng, 37, 16);
    const std::string path = temp_path("roundtrip");
    idx.save(path);
    const Index back = Index::load(path);
    CHECK(back.frozen());
    REQUIRE(back.count() == idx.count());
    CHECK(back.dim() == idx.dim());
    for (size_t i = 0; i < idx.count(); ++i) {
        CHECK(back.entry(i).clip_id == idx.entry(i).clip_id);
        REQUIRE(back.entry(i).embedding.size() == idx.entry(i).embedding.size());
        for (size_t d = 0; d < 16; ++d)
            CHECK(back.entry(i).embedding[d] == idx.entry(i).embedding[d]);
    }
    // identical query results after the round trip
    const auto query = unit_vec(rng, 16);
    const auto a = idx.topk(query, 5);
    const auto b = back.topk(query, 5);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].clip_id == b[i].clip_id);
        CHECK(a[i].cosine == b[i].cosine);
    }
    std::remove(path.c_str());
}

TEST_CASE("corrupt index files fail with a parse error naming the offset") {
    ab::Rng rng(99);
    Index idx = random_index(rng, 3, 4);
    const std::string path = temp_path("corrupt");
    idx.save(path);

    auto clobber = [&](std::streamoff off, char byte) {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(off);
        f.put(byte);
    };

    clobber(0, 'Z');  // magic
    CHECK_THROWS_WITH_AS((void)Index::load(path), doctest::Contains("bad magic"),
                         std::runtime_error);
    idx.save(path);
    clobber(4, 9);  // version
    CHECK_THROWS_WITH_AS((void)Index::load(path), doctest::Contains("unsupported version"),
                         std::runtime_error);

    // truncation mid-entry
    idx.save(path);
    {
        std::ifstream f(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
    }
    CHECK_THROWS_WITH_AS((void)Index::load(path), doctest::Contains("offset"), std::runtime_error);

    std::remove(path.c_str());
    CHECK_THROWS_AS((void)Index::load(path), std::runtime_error);
}

TEST_CASE("load rejects embeddings that lost unit norm") {
    Index idx(2);
    idx.add({"ok", {0.6, 0.8}});
    idx.freeze();
    const std::string path = temp_path("norm");
    idx.save(path);
    {
        // overwrite the first payload double (offset 4+4+4+4 + 2 + 2)
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(20);
        const double junk = 3.5;
        f.write(reinterpret_cast<const char*>(&junk), sizeof(junk));
    }
    CHECK_THROWS_WITH_AS((void)Index::load(path), doctest::Contains("unit norm"),
                         std::runtime_error);
    std::remove(path.c_str());
}
