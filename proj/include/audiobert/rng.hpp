#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace ab {

// Deterministic RNG used everywhere in the repo. mt19937_64 has a fully
// specified output sequence, and the distributions below are hand-rolled so
// that results do not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), n > 0; unbiased via rejection
    int64_t uniform_int(int64_t n);

    // standard normal via Box-Muller
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stable named sub-stream of a master seed, so each pipeline phase draws from
// its own independent sequence.
uint64_t sub_seed(uint64_t seed, std::string_view name);

}  // namespace ab
