#include "audiobert/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace ab::retr {

static_assert(std::endian::native == std::endian::little,
              "index format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'B', 'I', 'X'};
constexpr uint32_t kVersion = 1;

void check_unit_norm(const std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-9)
        throw std::invalid_argument("Index: embedding is not unit norm");
}

[[noreturn]] void parse_fail(const std::string& path, std::istream& is, const std::string& what) {
    const auto off = static_cast<long long>(is.tellg());
    throw std::runtime_error(path + ": " + what + " (offset " + std::to_string(off) + ")");
}

}  // namespace

void Index::add(IndexEntry entry) {
    if (frozen_) throw std::runtime_error("Index::add: index is frozen");
    if (entry.clip_id.empty()) throw std::invalid_argument("Index::add: empty clip id");
    if (dim_ == 0) dim_ = static_cast<int>(entry.embedding.size());
    if (static_cast<int>(entry.embedding.size()) != dim_ || dim_ == 0)
        throw std::invalid_argument("Index::add: embedding dimension mismatch");
    check_unit_norm(entry.embedding);
    for (const auto& e : entries_)
        if (e.clip_id == entry.clip_id)
            throw std::invalid_argument("Index::add: duplicate clip id " + entry.clip_id);
    entries_.push_back(std::move(entry));
}

std::vector<SearchHit> Index::topk(const std::vector<double>& query, size_t k) const {
    if (entries_.empty()) throw std::runtime_error("Index::topk: empty index");
    if (k < 1) throw std::invalid_argument("Index::topk: k must be at least 1");
    if (static_cast<int>(query.size()) != dim_)
        throw std::invalid_argument("Index::topk: query dimension mismatch");
    double qsq = 0.0;
    for (double x : query) qsq += x * x;
    const double qinv = 1.0 / std::max(std::sqrt(qsq), 1e-12);

    std::vector<SearchHit> hits;
    hits.reserve(entries_.size());
    for (const auto& e : entries_) {
        double dot = 0.0;
        for (size_t i = 0; i < query.size(); ++i) dot += query[i] * e.embedding[i];
        hits.push_back({e.clip_id, std::clamp(dot * qinv, -1.0, 1.0)});
    }
    const size_t keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                      [](const SearchHit& a, const SearchHit& b) {
                          if (a.cosine != b.cosine) return a.cosine > b.cosine;
                          return a.clip_id < b.clip_id;
                      });
    hits.resize(keep);
    return hits;
}

void Index::save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("Index::save: cannot open " + tmp);
        os.write(kMagic, 4);
        const uint32_t ver = kVersion, cnt = static_cast<uint32_t>(entries_.size()),
                       dim = static_cast<uint32_t>(dim_);
        os.write(reinterpret_cast<const char*>(&ver), 4);
        os.write(reinterpret_cast<const char*>(&cnt), 4);
        os.write(reinterpret_cast<const char*>(&dim), 4);
        for (const auto& e : entries_) {
            const uint16_t len = static_cast<uint16_t>(e.clip_id.size());
            os.write(reinterpret_cast<const char*>(&len), 2);
            os.write(e.clip_id.data(), len);
            os.write(reinterpret_cast<const char*>(e.embedding.data()),
                     static_cast<std::streamsize>(e.embedding.size() * sizeof(double)));
        }
        if (!os) throw std::runtime_error("Index::save: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Index Index::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("Index::load: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) parse_fail(path, is, "bad magic");
    uint32_t ver = 0, cnt = 0, dim = 0;
    is.read(reinterpret_cast<char*>(&ver), 4);
    is.read(reinterpret_cast<char*>(&cnt), 4);
    is.read(reinterpret_cast<char*>(&dim), 4);
    if (!is) parse_fail(path, is, "truncated header");
    if (ver != kVersion) parse_fail(path, is, "unsupported version " + std::to_string(ver));

    Index idx(static_cast<int>(dim));
    std::unordered_set<std::string> seen;
    idx.entries_.reserve(cnt);
    for (uint32_t i = 0; i < cnt; ++i) {
        uint16_t len = 0;
        is.read(reinterpret_cast<char*>(&len), 2);
        if (!is) parse_fail(path, is, "truncated id length");
        IndexEntry e;
        e.clip_id.resize(len);
        is.read(e.clip_id.data(), len);
        e.embedding.resize(dim);
        is.read(reinterpret_cast<char*>(e.embedding.data()),
                static_cast<std::streamsize>(e.embedding.size() * sizeof(double)));
        if (!is) parse_fail(path, is, "truncated entry " + std::to_string(i));
        if (!seen.insert(e.clip_id).second) parse_fail(path, is, "duplicate id " + e.clip_id);
        double sq = 0.0;
        for (double x : e.embedding) sq += x * x;
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-9)
            parse_fail(path, is, "entry " + std::to_string(i) + " is not unit norm");
        idx.entries_.push_back(std::move(e));
    }
    idx.freeze();
    return idx;
}

}  // namespace ab::retr
