#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ab::retr {

struct IndexEntry {
    std::string clip_id;
    std::vector<double> embedding;  // unit norm
};

struct SearchHit {
    std::string clip_id;
    double cosine;
};

// Exact cosine top-k over unit-norm embeddings. Build single-writer, then
// freeze; a frozen index rejects further adds and is safe to query from
// any number of threads.
class Index {
public:
    Index() = default;
    explicit Index(int dim) : dim_(dim) {}

    void add(IndexEntry entry);
    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    size_t count() const { return entries_.size(); }
    int dim() const { return dim_; }
    const IndexEntry& entry(size_t i) const { return entries_[i]; }

    // exactly min(k, count) hits, sorted by cosine descending, ties broken
    // by ascending clip_id
    std::vector<SearchHit> topk(const std::vector<double>& query, size_t k) const;

    // "ABIX" container; load/save round-trips exactly
    void save(const std::string& path) const;
    static Index load(const std::string& path);

private:
    std::vector<IndexEntry> entries_;
    int dim_ = 0;
    bool frozen_ = false;
};

}  // namespace ab::retr
