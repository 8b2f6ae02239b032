#include "audiobert/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ab::num {

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions opt) : opt_(opt) {
    add(std::move(params), true);
}

AdamW::AdamW(std::vector<Tensor> decay_params, std::vector<Tensor> no_decay_params, AdamWOptions opt)
    : opt_(opt) {
    add(std::move(decay_params), true);
    add(std::move(no_decay_params), false);
}

void AdamW::add(std::vector<Tensor> params, bool decay) {
    for (auto& p : params) {
        if (!p.requires_grad())
            throw std::invalid_argument("AdamW: parameter does not require gradients");
        const size_t n = static_cast<size_t>(p.numel());
        slots_.push_back(Slot{std::move(p), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), decay});
    }
}

void AdamW::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
        if (!s.param.has_grad())
            throw std::runtime_error("AdamW::step: parameter gradient missing; call zero_grad + backward first");
        const std::vector<double>& g = s.param.grad();
        std::vector<double>& w = s.param.mutable_data();
        const double decay_mul = s.decay ? 1.0 - opt_.lr * opt_.weight_decay : 1.0;
        for (size_t i = 0; i < w.size(); ++i) {
            w[i] *= decay_mul;
            s.m[i] = opt_.beta1 * s.m[i] + (1.0 - opt_.beta1) * g[i];
            s.v[i] = opt_.beta2 * s.v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            w[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
        }
    }
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (const auto& p : params) {
            if (!p.has_grad()) continue;
            // grads live on leaf nodes; scale in place
            auto node = p.node();
            for (auto& g : node->grad) g *= scale;
        }
    }
    return norm;
}

}  // namespace ab::num
