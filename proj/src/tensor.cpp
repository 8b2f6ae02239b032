#include "audiobert/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace ab::num {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

namespace {

MapC cmap(const Node& n, int64_t r, int64_t c) { return MapC(n.value.data(), r, c); }
MapM gmap(Node& n, int64_t r, int64_t c) { return MapM(n.grad.data(), r, c); }

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->needs_grad = requires_grad;
    return n;
}

std::shared_ptr<Node> make_op(Shape shape, std::vector<std::shared_ptr<Node>> parents,
                              std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.resize(static_cast<size_t>(shape_numel(n->shape)));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->needs_grad;
    n->needs_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

void check_2d(const Tensor& t, const char* who) {
    require(t.ndim() == 2, std::string(who) + ": expected a 2-D tensor");
}

}  // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

Node& Tensor::node_ref() const {
    if (!n_) throw std::invalid_argument("Tensor: use of an undefined tensor");
    return *n_;
}

int64_t Tensor::rows() const {
    require(ndim() == 2, "Tensor::rows: not 2-D");
    return dim(0);
}

int64_t Tensor::cols() const {
    require(ndim() == 2, "Tensor::cols: not 2-D");
    return dim(1);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    require(n >= 0, "Tensor::zeros: negative extent");
    return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    require(shape_numel(shape) == static_cast<int64_t>(data.size()),
            "Tensor::from: data length does not match shape");
    return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    auto n = shape_numel(shape);
    std::vector<double> d(static_cast<size_t>(n));
    for (auto& v : d) v = rng.normal() * stddev;
    return Tensor(make_leaf(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

void Tensor::set_requires_grad(bool b) {
    Node& n = node_ref();
    require(!n.backprop, "set_requires_grad: only leaf tensors may be toggled");
    n.needs_grad = b;
}

std::vector<double>& Tensor::mutable_data() {
    Node& n = node_ref();
    require(!n.backprop, "mutable_data: only leaf tensors may be mutated");
    return n.value;
}

double Tensor::item() const {
    require(numel() == 1, "Tensor::item: tensor is not scalar");
    return node_ref().value[0];
}

bool Tensor::has_grad() const {
    const Node& n = node_ref();
    return n.grad.size() == n.value.size();
}

const std::vector<double>& Tensor::grad() const {
    const Node& n = node_ref();
    if (n.grad.size() != n.value.size())
        throw std::invalid_argument("Tensor::grad: gradient not populated; run backward first");
    return n.grad;
}

void Tensor::zero_grad() {
    Node& n = node_ref();
    n.grad.assign(n.value.size(), 0.0);
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <class Fwd, class Bwd>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    require(a.shape() == b.shape(), std::string(name) + ": shape mismatch");
    auto pa = a.node();
    auto pb = b.node();
    auto out = make_op(a.shape(), {pa, pb}, nullptr);
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = fwd(pa->value[i], pb->value[i]);
    if (out->needs_grad) {
        out->backprop = [pa, pb, bwd](Node& self) {
            const size_t m = self.value.size();
            if (pa->needs_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < m; ++i) pa->grad[i] += bwd(0, pa->value[i], pb->value[i], self.grad[i]);
            }
            if (pb->needs_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < m; ++i) pb->grad[i] += bwd(1, pa->value[i], pb->value[i], self.grad[i]);
            }
        };
    }
    return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(a, b, "add",
        [](double x, double y) { return x + y; },
        [](int which, double, double, double g) { (void)which; return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(a, b, "sub",
        [](double x, double y) { return x - y; },
        [](int which, double, double, double g) { return which == 0 ? g : -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(a, b, "mul",
        [](double x, double y) { return x * y; },
        [](int which, double x, double y, double g) { return which == 0 ? g * y : g * x; });
}

Tensor scale(const Tensor& a, double s) {
    auto pa = a.node();
    auto out = make_op(a.shape(), {pa}, nullptr);
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = pa->value[i] * s;
    if (out->needs_grad) {
        out->backprop = [pa, s](Node& self) {
            pa->ensure_grad();
            const size_t m = self.value.size();
            for (size_t i = 0; i < m; ++i) pa->grad[i] += self.grad[i] * s;
        };
    }
    return Tensor(out);
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    check_2d(x, "add_bias");
    require(b.ndim() == 1 && b.dim(0) == x.dim(1), "add_bias: bias length must equal columns");
    auto px = x.node();
    auto pb = b.node();
    const int64_t r = x.dim(0), c = x.dim(1);
    auto out = make_op(x.shape(), {px, pb}, nullptr);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j)
            out->value[static_cast<size_t>(i * c + j)] =
                px->value[static_cast<size_t>(i * c + j)] + pb->value[static_cast<size_t>(j)];
    if (out->needs_grad) {
        out->backprop = [px, pb, r, c](Node& self) {
            if (px->needs_grad) {
                px->ensure_grad();
                const size_t m = self.value.size();
                for (size_t i = 0; i < m; ++i) px->grad[i] += self.grad[i];
            }
            if (pb->needs_grad) {
                pb->ensure_grad();
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        pb->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i * c + j)];
            }
        };
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    require(a.dim(1) == b.dim(0), "matmul: inner extents differ");
    auto pa = a.node();
    auto pb = b.node();
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_op({m, n}, {pa, pb}, nullptr);
    MapM(out->value.data(), m, n).noalias() = cmap(*pa, m, k) * cmap(*pb, k, n);
    if (out->needs_grad) {
        out->backprop = [pa, pb, m, k, n](Node& self) {
            MapC g(self.grad.data(), m, n);
            if (pa->needs_grad) {
                pa->ensure_grad();
                gmap(*pa, m, k).noalias() += g * cmap(*pb, k, n).transpose();
            }
            if (pb->needs_grad) {
                pb->ensure_grad();
                gmap(*pb, k, n).noalias() += cmap(*pa, m, k).transpose() * g;
            }
        };
    }
    return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& w) {
    check_2d(x, "linear");
    check_2d(w, "linear");
    require(x.dim(1) == w.dim(1), "linear: input width must equal weight input dim");
    auto px = x.node();
    auto pw = w.node();
    const int64_t t = x.dim(0), in = x.dim(1), outd = w.dim(0);
    auto out = make_op({t, outd}, {px, pw}, nullptr);
    MapM(out->value.data(), t, outd).noalias() = cmap(*px, t, in) * cmap(*pw, outd, in).transpose();
    if (out->needs_grad) {
        out->backprop = [px, pw, t, in, outd](Node& self) {
            MapC g(self.grad.data(), t, outd);
            if (px->needs_grad) {
                px->ensure_grad();
                gmap(*px, t, in).noalias() += g * cmap(*pw, outd, in);
            }
            if (pw->needs_grad) {
                pw->ensure_grad();
                gmap(*pw, outd, in).noalias() += g.transpose() * cmap(*px, t, in);
            }
        };
    }
    return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_bias(linear(x, w), b);
}

Tensor transpose(const Tensor& x) {
    check_2d(x, "transpose");
    auto px = x.node();
    const int64_t r = x.dim(0), c = x.dim(1);
    auto out = make_op({c, r}, {px}, nullptr);
    MapM(out->value.data(), c, r).noalias() = cmap(*px, r, c).transpose();
    if (out->needs_grad) {
        out->backprop = [px, r, c](Node& self) {
            px->ensure_grad();
            gmap(*px, r, c).noalias() += MapC(self.grad.data(), c, r).transpose();
        };
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// shape surgery

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end) {
    check_2d(x, "slice_rows");
    require(0 <= begin && begin < end && end <= x.dim(0), "slice_rows: range out of bounds");
    auto px = x.node();
    const int64_t c = x.dim(1);
    auto out = make_op({end - begin, c}, {px}, nullptr);
    std::memcpy(out->value.data(), px->value.data() + begin * c,
                static_cast<size_t>((end - begin) * c) * sizeof(double));
    if (out->needs_grad) {
        out->backprop = [px, begin, c](Node& self) {
            px->ensure_grad();
            const size_t m = self.value.size();
            double* dst = px->grad.data() + begin * c;
            for (size_t i = 0; i < m; ++i) dst[i] += self.grad[i];
        };
    }
    return Tensor(out);
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
    require(!xs.empty(), "concat_rows: empty input");
    const int64_t c = xs[0].dim(1);
    int64_t total = 0;
    std::vector<std::shared_ptr<Node>> parents;
    parents.reserve(xs.size());
    for (const auto& x : xs) {
        require(x.ndim() == 2 && x.dim(1) == c, "concat_rows: column extents differ");
        total += x.dim(0);
        parents.push_back(x.node());
    }
    auto out = make_op({total, c}, parents, nullptr);
    int64_t off = 0;
    for (const auto& x : xs) {
        std::memcpy(out->value.data() + off * c, x.node()->value.data(),
                    static_cast<size_t>(x.numel()) * sizeof(double));
        off += x.dim(0);
    }
    if (out->needs_grad) {
        std::vector<std::shared_ptr<Node>> ps = out->parents;
        out->backprop = [ps, c](Node& self) {
            int64_t row = 0;
            for (const auto& p : ps) {
                const int64_t nr = p->shape[0];
                if (p->needs_grad) {
                    p->ensure_grad();
                    const double* src = self.grad.data() + row * c;
                    for (int64_t i = 0; i < nr * c; ++i) p->grad[static_cast<size_t>(i)] += src[i];
                }
                row += nr;
            }
        };
    }
    return Tensor(out);
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    check_2d(table, "gather_rows");
    auto pt = table.node();
    const int64_t v = table.dim(0), c = table.dim(1);
    for (int id : ids)
        require(0 <= id && id < v, "gather_rows: index out of range");
    auto out = make_op({static_cast<int64_t>(ids.size()), c}, {pt}, nullptr);
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out->value.data() + static_cast<int64_t>(i) * c,
                    pt->value.data() + static_cast<int64_t>(ids[i]) * c,
                    static_cast<size_t>(c) * sizeof(double));
    if (out->needs_grad) {
        out->backprop = [pt, ids, c](Node& self) {
            pt->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                const double* src = self.grad.data() + static_cast<int64_t>(i) * c;
                double* dst = pt->grad.data() + static_cast<int64_t>(ids[i]) * c;
                for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
            }
        };
    }
    return Tensor(out);
}

Tensor add_at_row(const Tensor& x, int64_t row, const Tensor& v) {
    check_2d(x, "add_at_row");
    require(0 <= row && row < x.dim(0), "add_at_row: row out of range");
    const int64_t c = x.dim(1);
    require(v.numel() == c, "add_at_row: vector length must equal columns");
    auto px = x.node();
    auto pv = v.node();
    auto out = make_op(x.shape(), {px, pv}, nullptr);
    out->value = px->value;
    for (int64_t j = 0; j < c; ++j)
        out->value[static_cast<size_t>(row * c + j)] += pv->value[static_cast<size_t>(j)];
    if (out->needs_grad) {
        out->backprop = [px, pv, row, c](Node& self) {
            if (px->needs_grad) {
                px->ensure_grad();
                const size_t m = self.value.size();
                for (size_t i = 0; i < m; ++i) px->grad[i] += self.grad[i];
            }
            if (pv->needs_grad) {
                pv->ensure_grad();
                const double* src = self.grad.data() + row * c;
                for (int64_t j = 0; j < c; ++j) pv->grad[static_cast<size_t>(j)] += src[j];
            }
        };
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// normalization and nonlinearities

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_2d(x, "layer_norm");
    const int64_t r = x.dim(0), c = x.dim(1);
    require(gamma.ndim() == 1 && gamma.dim(0) == c, "layer_norm: gamma length must equal columns");
    require(beta.ndim() == 1 && beta.dim(0) == c, "layer_norm: beta length must equal columns");
    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    auto out = make_op(x.shape(), {px, pg, pb}, nullptr);
    // keep the normalized activations and inverse stddev for the backward pass
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(r * c));
    auto istd = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        const double* xi = px->value.data() + i * c;
        double mean = 0.0;
        for (int64_t j = 0; j < c; ++j) mean += xi[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            double d = xi[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        double is = 1.0 / std::sqrt(var + eps);
        (*istd)[static_cast<size_t>(i)] = is;
        double* xh = xhat->data() + i * c;
        double* yo = out->value.data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
            xh[j] = (xi[j] - mean) * is;
            yo[j] = xh[j] * pg->value[static_cast<size_t>(j)] + pb->value[static_cast<size_t>(j)];
        }
    }
    if (out->needs_grad) {
        out->backprop = [px, pg, pb, xhat, istd, r, c](Node& self) {
            if (pg->needs_grad) pg->ensure_grad();
            if (pb->needs_grad) pb->ensure_grad();
            if (px->needs_grad) px->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const double* g = self.grad.data() + i * c;
                const double* xh = xhat->data() + i * c;
                if (pg->needs_grad)
                    for (int64_t j = 0; j < c; ++j) pg->grad[static_cast<size_t>(j)] += g[j] * xh[j];
                if (pb->needs_grad)
                    for (int64_t j = 0; j < c; ++j) pb->grad[static_cast<size_t>(j)] += g[j];
                if (px->needs_grad) {
                    double sum_gy = 0.0, sum_gyx = 0.0;
                    for (int64_t j = 0; j < c; ++j) {
                        double gy = g[j] * pg->value[static_cast<size_t>(j)];
                        sum_gy += gy;
                        sum_gyx += gy * xh[j];
                    }
                    const double inv_c = 1.0 / static_cast<double>(c);
                    const double is = (*istd)[static_cast<size_t>(i)];
                    double* dx = px->grad.data() + i * c;
                    for (int64_t j = 0; j < c; ++j) {
                        double gy = g[j] * pg->value[static_cast<size_t>(j)];
                        dx[j] += is * (gy - inv_c * sum_gy - xh[j] * inv_c * sum_gyx);
                    }
                }
            }
        };
    }
    return Tensor(out);
}

namespace {

// stabilized softmax over contiguous stripes of length n with stride 1
void softmax_rows_raw(const double* in, double* out, int64_t rows, int64_t n) {
    for (int64_t i = 0; i < rows; ++i) {
        const double* x = in + i * n;
        double* y = out + i * n;
        double mx = x[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        const double inv = 1.0 / z;
        for (int64_t j = 0; j < n; ++j) y[j] *= inv;
    }
}

void softmax_rows_backward(const double* y, const double* gy, double* gx, int64_t rows, int64_t n) {
    for (int64_t i = 0; i < rows; ++i) {
        const double* yi = y + i * n;
        const double* gi = gy + i * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += yi[j] * gi[j];
        double* go = gx + i * n;
        for (int64_t j = 0; j < n; ++j) go[j] += yi[j] * (gi[j] - dot);
    }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    require(x.ndim() == 1 || x.ndim() == 2, "softmax: expected 1-D or 2-D input");
    if (x.ndim() == 1) {
        require(axis == -1 || axis == 0, "softmax: bad axis for 1-D input");
        auto px = x.node();
        auto out = make_op(x.shape(), {px}, nullptr);
        softmax_rows_raw(px->value.data(), out->value.data(), 1, x.dim(0));
        if (out->needs_grad) {
            auto n = x.dim(0);
            out->backprop = [px, n](Node& self) {
                px->ensure_grad();
                softmax_rows_backward(self.value.data(), self.grad.data(), px->grad.data(), 1, n);
            };
        }
        return Tensor(out);
    }
    const int ax = (axis == -1) ? 1 : axis;
    require(ax == 0 || ax == 1, "softmax: bad axis for 2-D input");
    if (ax == 0) return transpose(softmax(transpose(x), 1));
    auto px = x.node();
    const int64_t r = x.dim(0), c = x.dim(1);
    auto out = make_op(x.shape(), {px}, nullptr);
    softmax_rows_raw(px->value.data(), out->value.data(), r, c);
    if (out->needs_grad) {
        out->backprop = [px, r, c](Node& self) {
            px->ensure_grad();
            softmax_rows_backward(self.value.data(), self.grad.data(), px->grad.data(), r, c);
        };
    }
    return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id) {
    check_2d(logits, "cross_entropy");
    const int64_t r = logits.dim(0), c = logits.dim(1);
    require(static_cast<int64_t>(targets.size()) == r, "cross_entropy: one target per row required");
    int64_t kept = 0;
    for (int t : targets) {
        if (t == ignore_id) continue;
        require(0 <= t && t < c, "cross_entropy: target out of range");
        ++kept;
    }
    if (kept == 0) throw std::runtime_error("cross_entropy: all rows ignored, loss undefined");
    auto pl = logits.node();
    auto out = make_op({1}, {pl}, nullptr);
    // softmax probabilities are reused by the backward pass
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(r * c));
    softmax_rows_raw(pl->value.data(), probs->data(), r, c);
    double loss = 0.0;
    for (int64_t i = 0; i < r; ++i) {
        if (targets[static_cast<size_t>(i)] == ignore_id) continue;
        // recompute the log-sum-exp path for an exactly-stabilized log prob
        const double* x = pl->value.data() + i * c;
        double mx = x[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
        loss += std::log(z) + mx - x[targets[static_cast<size_t>(i)]];
    }
    out->value[0] = loss / static_cast<double>(kept);
    if (out->needs_grad) {
        auto tcopy = targets;
        out->backprop = [pl, probs, tcopy, ignore_id, r, c, kept](Node& self) {
            pl->ensure_grad();
            const double g = self.grad[0] / static_cast<double>(kept);
            for (int64_t i = 0; i < r; ++i) {
                const int t = tcopy[static_cast<size_t>(i)];
                if (t == ignore_id) continue;
                const double* p = probs->data() + i * c;
                double* d = pl->grad.data() + i * c;
                for (int64_t j = 0; j < c; ++j) d[j] += g * p[j];
                d[t] -= g;
            }
        };
    }
    return Tensor(out);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, double scal) {
    check_2d(q, "attention");
    require(q.shape() == k.shape() && q.shape() == v.shape(), "attention: q/k/v shapes differ");
    const int64_t t = q.dim(0), d = q.dim(1);
    require(heads > 0 && d % heads == 0, "attention: width must divide by heads");
    const int64_t hd = d / heads;
    auto pq = q.node();
    auto pk = k.node();
    auto pv = v.node();
    auto out = make_op({t, d}, {pq, pk, pv}, nullptr);
    // per-head attention weights are kept for the backward pass
    auto weights = std::make_shared<std::vector<EMat>>();
    weights->reserve(static_cast<size_t>(heads));
    {
        MapC Q(pq->value.data(), t, d), K(pk->value.data(), t, d), V(pv->value.data(), t, d);
        MapM O(out->value.data(), t, d);
        for (int h = 0; h < heads; ++h) {
            const int64_t c0 = h * hd;
            EMat s = scal * (Q.middleCols(c0, hd) * K.middleCols(c0, hd).transpose());
            softmax_rows_raw(s.data(), s.data(), t, t);
            O.middleCols(c0, hd).noalias() = s * V.middleCols(c0, hd);
            weights->push_back(std::move(s));
        }
    }
    if (out->needs_grad) {
        out->backprop = [pq, pk, pv, weights, heads, hd, t, d, scal](Node& self) {
            MapC G(self.grad.data(), t, d);
            MapC Q(pq->value.data(), t, d), K(pk->value.data(), t, d), V(pv->value.data(), t, d);
            if (pq->needs_grad) pq->ensure_grad();
            if (pk->needs_grad) pk->ensure_grad();
            if (pv->needs_grad) pv->ensure_grad();
            for (int h = 0; h < heads; ++h) {
                const int64_t c0 = h * hd;
                const EMat& P = (*weights)[static_cast<size_t>(h)];
                EMat gout = G.middleCols(c0, hd);
                if (pv->needs_grad)
                    gmap(*pv, t, d).middleCols(c0, hd).noalias() += P.transpose() * gout;
                if (pq->needs_grad || pk->needs_grad) {
                    EMat gp = gout * V.middleCols(c0, hd).transpose();
                    EMat gs(t, t);
                    gs.setZero();
                    softmax_rows_backward(P.data(), gp.data(), gs.data(), t, t);
                    if (pq->needs_grad)
                        gmap(*pq, t, d).middleCols(c0, hd).noalias() += scal * (gs * K.middleCols(c0, hd));
                    if (pk->needs_grad)
                        gmap(*pk, t, d).middleCols(c0, hd).noalias() += scal * (gs.transpose() * Q.middleCols(c0, hd));
                }
            }
        };
    }
    return Tensor(out);
}

Tensor gelu(const Tensor& x) {
    auto px = x.node();
    auto out = make_op(x.shape(), {px}, nullptr);
    const size_t n = out->value.size();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < n; ++i) {
        const double xi = px->value[i];
        out->value[i] = 0.5 * xi * (1.0 + std::erf(xi * inv_sqrt2));
    }
    if (out->needs_grad) {
        out->backprop = [px](Node& self) {
            px->ensure_grad();
            constexpr double is2 = 0.70710678118654752440;
            constexpr double inv_sqrt_2pi = 0.39894228040143267794;
            const size_t m = self.value.size();
            for (size_t i = 0; i < m; ++i) {
                const double xi = px->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(xi * is2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
                px->grad[i] += self.grad[i] * (cdf + xi * pdf);
            }
        };
    }
    return Tensor(out);
}

Tensor sum(const Tensor& x) {
    auto px = x.node();
    auto out = make_op({1}, {px}, nullptr);
    double s = 0.0;
    for (double v : px->value) s += v;
    out->value[0] = s;
    if (out->needs_grad) {
        out->backprop = [px](Node& self) {
            px->ensure_grad();
            const double g = self.grad[0];
            for (auto& gv : px->grad) gv += g;
        };
    }
    return Tensor(out);
}

Tensor l2_normalize_rows(const Tensor& x) {
    check_2d(x, "l2_normalize_rows");
    const int64_t r = x.dim(0), c = x.dim(1);
    auto px = x.node();
    auto out = make_op(x.shape(), {px}, nullptr);
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        const double* xi = px->value.data() + i * c;
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) s += xi[j] * xi[j];
        const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
        (*inv_norm)[static_cast<size_t>(i)] = inv;
        double* y = out->value.data() + i * c;
        for (int64_t j = 0; j < c; ++j) y[j] = xi[j] * inv;
    }
    if (out->needs_grad) {
        out->backprop = [px, inv_norm, r, c](Node& self) {
            px->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const double* y = self.value.data() + i * c;
                const double* g = self.grad.data() + i * c;
                double dot = 0.0;
                for (int64_t j = 0; j < c; ++j) dot += y[j] * g[j];
                const double inv = (*inv_norm)[static_cast<size_t>(i)];
                double* d = px->grad.data() + i * c;
                for (int64_t j = 0; j < c; ++j) d[j] += inv * (g[j] - y[j] * dot);
            }
        };
    }
    return Tensor(out);
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    require(0.0 <= rate && rate < 1.0, "dropout: rate must lie in [0,1)");
    if (rate == 0.0) return x;
    auto px = x.node();
    auto out = make_op(x.shape(), {px}, nullptr);
    const double keep = 1.0 - rate;
    const double scl = 1.0 / keep;
    auto mask = std::make_shared<std::vector<double>>(px->value.size());
    for (size_t i = 0; i < px->value.size(); ++i) {
        const double m = rng.uniform() < rate ? 0.0 : scl;
        (*mask)[i] = m;
        out->value[i] = px->value[i] * m;
    }
    if (out->needs_grad) {
        out->backprop = [px, mask](Node& self) {
            px->ensure_grad();
            const size_t m = self.value.size();
            for (size_t i = 0; i < m; ++i) px->grad[i] += self.grad[i] * (*mask)[i];
        };
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    auto root = loss.node();
    // iterative post-order topological sort
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // interior nodes start from a clean gradient; leaves accumulate across calls
    for (Node* n : order) {
        if (n->backprop) n->grad.assign(n->value.size(), 0.0);
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->needs_grad) n->backprop(*n);
    }
}

}  // namespace ab::num
