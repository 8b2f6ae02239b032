#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "audiobert/rng.hpp"

namespace ab::num {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);

// Label used in cross-entropy targets for positions that carry no loss.
constexpr int kIgnoreId = -1;

// One node of the recorded computation. Interior nodes hold the closure that
// pulls their gradient back into their parents; leaves hold none.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Value handle onto a node. Copies share the node; the recorded graph is
// rebuilt by every forward pass and freed when the handles go out of scope.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return node_ref().shape; }
    int ndim() const { return static_cast<int>(node_ref().shape.size()); }
    int64_t dim(int i) const { return node_ref().shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return node_ref().numel(); }
    int64_t rows() const;  // 2-D only
    int64_t cols() const;  // 2-D only

    bool requires_grad() const { return node_ref().needs_grad; }
    void set_requires_grad(bool b);  // leaves only

    const std::vector<double>& data() const { return node_ref().value; }
    std::vector<double>& mutable_data();  // leaves only; used by the optimizer
    double at(int64_t i) const { return node_ref().value[static_cast<size_t>(i)]; }
    double item() const;  // scalar only

    bool has_grad() const;
    const std::vector<double>& grad() const;  // contract error when absent
    void zero_grad();

    const std::shared_ptr<Node>& node() const { return n_; }

private:
    Node& node_ref() const;
    std::shared_ptr<Node> n_;
};

// ---- operations; all record the computation for reverse-mode gradients ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// x[T,d] + b[d], broadcast over the leading dimension
Tensor add_bias(const Tensor& x, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
// y = x . w^T (+ bias); w is stored [out, in]
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
// y = x with v added into row `row`; used for embedding injection
Tensor add_at_row(const Tensor& x, int64_t row, const Tensor& v);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// axis 1 normalizes rows of a 2-D input (default); axis 0 normalizes columns.
Tensor softmax(const Tensor& x, int axis = -1);
// mean negative log-softmax over rows whose target is not ignore_id
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id = kIgnoreId);
// multi-head scaled dot-product self-attention over one sequence,
// q/k/v are [T, d] with d divisible by heads
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, double scal);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor l2_normalize_rows(const Tensor& x);
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Reverse-mode sweep from a scalar loss. Every reachable node that requires a
// gradient has it populated (accumulated for leaves).
void backward(const Tensor& loss);

}  // namespace ab::num
