#pragma once

#include <cstdint>
#include <vector>

#include "audiobert/tensor.hpp"

namespace ab::num {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay and bias-corrected moments. Parameters in
// the no_decay group (biases, layer-norm scales) skip the decay term.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWOptions opt);
    AdamW(std::vector<Tensor> decay_params, std::vector<Tensor> no_decay_params, AdamWOptions opt);

    // Allocates (and zeroes) the gradient buffer of every parameter; call
    // before backward so a step never sees a missing gradient.
    void zero_grad();

    // One update. Throws if any parameter has no gradient buffer.
    void step();

    double lr() const { return opt_.lr; }
    void set_lr(double lr) { opt_.lr = lr; }
    int64_t step_count() const { return t_; }

private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
        bool decay;
    };
    void add(std::vector<Tensor> params, bool decay);

    std::vector<Slot> slots_;
    AdamWOptions opt_;
    int64_t t_ = 0;
};

// Global-norm gradient clipping over a parameter group; returns the norm
// before clipping. Parameters without a gradient buffer are skipped.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

}  // namespace ab::num
