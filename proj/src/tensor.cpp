#include "snag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace snag {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

void Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

namespace {

thread_local int g_no_grad_depth = 0;

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
    throw std::invalid_argument(op + ": " + msg);
}

void check_same_rank_last(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail(op, "shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

NodePtr make_node(Shape shape, std::vector<Scalar> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

bool want_record(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Row-major strides, padded on the left to `rank`, with 0 stride on
// broadcast (size-1) dims.
std::vector<int64_t> broadcast_strides(const Shape& s, size_t rank,
                                       const Shape& out) {
    std::vector<int64_t> strides(rank, 0);
    int64_t acc = 1;
    size_t off = rank - s.size();
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        size_t k = off + i;
        strides[k] = (s[i] == 1 && out[k] != 1) ? 0 : acc;
        acc *= s[i];
    }
    return strides;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (size_t k = 0; k < rank; ++k) {
        int da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
        int db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[k] = std::max(da, db);
    }
    return out;
}

// Walks an output index space while tracking linear offsets into two
// broadcast inputs.
struct BcIter {
    const Shape& out;
    std::vector<int64_t> sa, sb;
    std::vector<int> idx;

    BcIter(const Shape& out_shape, const Shape& a, const Shape& b)
        : out(out_shape),
          sa(broadcast_strides(a, out_shape.size(), out_shape)),
          sb(broadcast_strides(b, out_shape.size(), out_shape)),
          idx(out_shape.size(), 0) {}

    template <typename F>
    void run(F&& f) {
        int64_t n = numel(out);
        size_t rank = out.size();
        int64_t ia = 0, ib = 0;
        for (int64_t lin = 0; lin < n; ++lin) {
            f(lin, ia, ib);
            for (int k = static_cast<int>(rank) - 1; k >= 0; --k) {
                idx[k]++;
                ia += sa[k];
                ib += sb[k];
                if (idx[k] < out[k]) break;
                ia -= sa[k] * out[k];
                ib -= sb[k] * out[k];
                idx[k] = 0;
            }
        }
    }
};

using BinFwd = Scalar (*)(Scalar, Scalar);
using BinBwd = void (*)(Scalar a, Scalar b, Scalar y, Scalar g, Scalar& ga,
                        Scalar& gb);

Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, BinFwd fwd,
                 BinBwd bwd) {
    if (!a.defined() || !b.defined()) fail(op, "undefined tensor");
    Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
    std::vector<Scalar> out(numel(out_shape));
    const auto& av = a.data();
    const auto& bv = b.data();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        BcIter it(out_shape, a.shape(), b.shape());
        it.run([&](int64_t lin, int64_t ia, int64_t ib) {
            out[lin] = fwd(av[ia], bv[ib]);
        });
    }
    auto node = make_node(out_shape, std::move(out));
    if (want_record({&a, &b})) {
        node->requires_grad = true;
        node->op = op;
        node->parents = {a.handle(), b.handle()};
        bool ga_needed = a.requires_grad();
        bool gb_needed = b.requires_grad();
        node->backprop = [fwd, bwd, ga_needed, gb_needed](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (ga_needed) pa.ensure_grad();
            if (gb_needed) pb.ensure_grad();
            Scalar dummy = 0;
            if (pa.shape == pb.shape) {
                for (size_t i = 0; i < self.value.size(); ++i) {
                    Scalar ga = 0, gb = 0;
                    bwd(pa.value[i], pb.value[i], self.value[i], self.grad[i],
                        ga, gb);
                    if (ga_needed) pa.grad[i] += ga;
                    if (gb_needed) pb.grad[i] += gb;
                }
            } else {
                BcIter it(self.shape, pa.shape, pb.shape);
                it.run([&](int64_t lin, int64_t ia, int64_t ib) {
                    Scalar ga = 0, gb = 0;
                    bwd(pa.value[ia], pb.value[ib], self.value[lin],
                        self.grad[lin], ga, gb);
                    (ga_needed ? pa.grad[ia] : dummy) += ga;
                    (gb_needed ? pb.grad[ib] : dummy) += gb;
                });
            }
        };
    }
    return Tensor(node);
}

using UnFwd = Scalar (*)(Scalar, Scalar);
using UnBwd = Scalar (*)(Scalar x, Scalar y, Scalar p);

// p is an op parameter (slope, alpha, ...), unused by most ops.
Tensor unary_op(const char* op, const Tensor& a, Scalar p, UnFwd fwd,
                UnBwd dfdx) {
    if (!a.defined()) fail(op, "undefined tensor");
    std::vector<Scalar> out(a.size());
    const auto& av = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], p);
    auto node = make_node(a.shape(), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = op;
        node->parents = {a.handle()};
        node->backprop = [dfdx, p](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i)
                pa.grad[i] += self.grad[i] * dfdx(pa.value[i], self.value[i], p);
        };
    }
    return Tensor(node);
}

int64_t last_dim(const char* op, const Tensor& a) {
    if (a.rank() == 0 || a.dim(-1) == 0) fail(op, "empty last axis");
    return a.dim(-1);
}

}  // namespace

// ---- Tensor ------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(shape, std::vector<Scalar>(numel(shape), 0.0),
                     requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar v, bool requires_grad) {
    return from_data(shape, std::vector<Scalar>(numel(shape), v),
                     requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<Scalar> data,
                         bool requires_grad) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
        fail("from_data", "shape " + shape_str(shape) + " wants " +
                              std::to_string(numel(shape)) + " values, got " +
                              std::to_string(data.size()));
    auto n = make_node(std::move(shape), std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(Scalar v) { return from_data({1}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }

int Tensor::dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) fail("dim", "axis out of range");
    return node_->shape[i];
}

int64_t Tensor::size() const {
    return static_cast<int64_t>(node_->value.size());
}

const std::vector<Scalar>& Tensor::data() const { return node_->value; }
std::vector<Scalar>& Tensor::mutable_data() { return node_->value; }

Scalar Tensor::item() const {
    if (size() != 1) fail("item", "tensor has " + std::to_string(size()) + " values");
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
}

const std::vector<Scalar>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// ---- GradTape ----------------------------------------------------------

GradTape::GradTape(const Tensor& loss) : root_(loss.handle()) {
    if (!root_) fail("backward", "undefined loss tensor");
    if (loss.size() != 1)
        fail("backward", "loss must be scalar, got " + shape_str(loss.shape()));
    // Iterative post-order DFS over requires_grad subgraph.
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    if (root_->requires_grad) stack.push_back({root_.get(), 0});
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order_.push_back(n);
            stack.pop_back();
        }
    }
    // Root may not have been marked; ensure it is last exactly once.
    if (!root_->requires_grad) order_.clear();
}

void GradTape::backward() {
    if (order_.empty()) return;
    root_->ensure_grad();
    root_->grad[0] += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

void backward(const Tensor& loss) { GradTape(loss).backward(); }

// ---- elementwise -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](Scalar x, Scalar y) { return x + y; },
        [](Scalar, Scalar, Scalar, Scalar g, Scalar& ga, Scalar& gb) {
            ga = g;
            gb = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](Scalar x, Scalar y) { return x - y; },
        [](Scalar, Scalar, Scalar, Scalar g, Scalar& ga, Scalar& gb) {
            ga = g;
            gb = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](Scalar x, Scalar y) { return x * y; },
        [](Scalar x, Scalar y, Scalar, Scalar g, Scalar& ga, Scalar& gb) {
            ga = g * y;
            gb = g * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](Scalar x, Scalar y) { return x / y; },
        [](Scalar x, Scalar y, Scalar, Scalar g, Scalar& ga, Scalar& gb) {
            ga = g / y;
            gb = -g * x / (y * y);
        });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary_op(
        "minimum", a, b, [](Scalar x, Scalar y) { return x <= y ? x : y; },
        [](Scalar x, Scalar y, Scalar, Scalar g, Scalar& ga, Scalar& gb) {
            if (x <= y)
                ga = g;
            else
                gb = g;
        });
}

Tensor add_scalar(const Tensor& a, Scalar c) {
    return unary_op(
        "add_scalar", a, c, [](Scalar x, Scalar p) { return x + p; },
        [](Scalar, Scalar, Scalar) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, Scalar c) {
    return unary_op(
        "mul_scalar", a, c, [](Scalar x, Scalar p) { return x * p; },
        [](Scalar, Scalar, Scalar p) { return p; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, 0, [](Scalar x, Scalar) { return std::exp(x); },
        [](Scalar, Scalar y, Scalar) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        "log", a, 0, [](Scalar x, Scalar) { return std::log(x); },
        [](Scalar x, Scalar, Scalar) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(
        "sqrt", a, 0, [](Scalar x, Scalar) { return std::sqrt(x); },
        [](Scalar, Scalar y, Scalar) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor sin(const Tensor& a) {
    return unary_op(
        "sin", a, 0, [](Scalar x, Scalar) { return std::sin(x); },
        [](Scalar x, Scalar, Scalar) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
    return unary_op(
        "cos", a, 0, [](Scalar x, Scalar) { return std::cos(x); },
        [](Scalar x, Scalar, Scalar) { return -std::sin(x); });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        "tanh", a, 0, [](Scalar x, Scalar) { return std::tanh(x); },
        [](Scalar, Scalar y, Scalar) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a, 0,
        [](Scalar x, Scalar) {
            return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
        },
        [](Scalar, Scalar y, Scalar) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, 0, [](Scalar x, Scalar) { return x > 0 ? x : 0.0; },
        [](Scalar x, Scalar, Scalar) { return x > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, Scalar slope) {
    return unary_op(
        "leaky_relu", a, slope,
        [](Scalar x, Scalar p) { return x > 0 ? x : p * x; },
        [](Scalar x, Scalar, Scalar p) { return x > 0 ? 1.0 : p; });
}

Tensor elu(const Tensor& a, Scalar alpha) {
    return unary_op(
        "elu", a, alpha,
        [](Scalar x, Scalar p) { return x > 0 ? x : p * (std::exp(x) - 1.0); },
        [](Scalar x, Scalar y, Scalar p) { return x > 0 ? 1.0 : y + p; });
}

Tensor abs(const Tensor& a) {
    return unary_op(
        "abs", a, 0, [](Scalar x, Scalar) { return std::fabs(x); },
        [](Scalar x, Scalar, Scalar) {
            return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
        });
}

// ---- matmul family -----------------------------------------------------

namespace {

// c[r, j] += sum_k a[r, k] * b[k, j]
void kgemm(const Scalar* a, const Scalar* b, Scalar* c, int64_t rows,
           int64_t inner, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        const Scalar* arow = a + r * inner;
        Scalar* crow = c + r * cols;
        for (int64_t k = 0; k < inner; ++k) {
            Scalar av = arow[k];
            if (av == 0.0) continue;
            const Scalar* brow = b + k * cols;
            for (int64_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[r, j] += sum_k a[r, k] * b[j, k]
void kgemm_nt(const Scalar* a, const Scalar* b, Scalar* c, int64_t rows,
              int64_t inner, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        const Scalar* arow = a + r * inner;
        Scalar* crow = c + r * cols;
        for (int64_t j = 0; j < cols; ++j) {
            const Scalar* brow = b + j * inner;
            Scalar acc = 0;
            for (int64_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// c[k, j] += sum_r a[r, k] * g[r, j]
void kgemm_tn(const Scalar* a, const Scalar* g, Scalar* c, int64_t rows,
              int64_t inner, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        const Scalar* arow = a + r * inner;
        const Scalar* grow = g + r * cols;
        for (int64_t k = 0; k < inner; ++k) {
            Scalar av = arow[k];
            if (av == 0.0) continue;
            Scalar* crow = c + k * cols;
            for (int64_t j = 0; j < cols; ++j) crow[j] += av * grow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 1 || b.rank() != 2)
        fail("matmul", "need [...,n,k] x [k,m], got " + shape_str(a.shape()) +
                           " x " + shape_str(b.shape()));
    int64_t k = a.dim(-1);
    if (k != b.dim(0))
        fail("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " +
                           shape_str(b.shape()));
    int64_t m = b.dim(1);
    int64_t rows = a.size() / k;
    Shape out_shape = a.shape();
    out_shape.back() = static_cast<int>(m);
    std::vector<Scalar> out(rows * m, 0.0);
    kgemm(a.data().data(), b.data().data(), out.data(), rows, k, m);
    auto node = make_node(std::move(out_shape), std::move(out));
    if (want_record({&a, &b})) {
        node->requires_grad = true;
        node->op = "matmul";
        node->parents = {a.handle(), b.handle()};
        node->backprop = [rows, k, m](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                // ga = g * b^T
                kgemm_nt(self.grad.data(), pb.value.data(), pa.grad.data(),
                         rows, m, k);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                // gb = a^T * g
                kgemm_tn(pa.value.data(), self.grad.data(), pb.grad.data(),
                         rows, k, m);
            }
        };
    }
    return Tensor(node);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        fail("matmul_nt", "need [n,k] x [m,k], got " + shape_str(a.shape()) +
                              " x " + shape_str(b.shape()));
    int64_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
    std::vector<Scalar> out(n * m, 0.0);
    kgemm_nt(a.data().data(), b.data().data(), out.data(), n, k, m);
    auto node = make_node({static_cast<int>(n), static_cast<int>(m)},
                          std::move(out));
    if (want_record({&a, &b})) {
        node->requires_grad = true;
        node->op = "matmul_nt";
        node->parents = {a.handle(), b.handle()};
        node->backprop = [n, k, m](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                // ga = g * b
                kgemm(self.grad.data(), pb.value.data(), pa.grad.data(), n, m,
                      k);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                // gb = g^T * a
                kgemm_tn(self.grad.data(), pa.value.data(), pb.grad.data(), n,
                         m, k);
            }
        };
    }
    return Tensor(node);
}

namespace {

Tensor batch_matmul(const char* op, const Tensor& a, const Tensor& b,
                    bool nt) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        fail(op, "need [B,n,k] x [B,*,*], got " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
    int64_t B = a.dim(0), n = a.dim(1), k = a.dim(2);
    int64_t m = nt ? b.dim(1) : b.dim(2);
    int64_t bk = nt ? b.dim(2) : b.dim(1);
    if (bk != k)
        fail(op, "inner dims differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
    std::vector<Scalar> out(B * n * m, 0.0);
    for (int64_t i = 0; i < B; ++i) {
        const Scalar* ap = a.data().data() + i * n * k;
        const Scalar* bp = b.data().data() + i * k * m;
        Scalar* cp = out.data() + i * n * m;
        if (nt)
            kgemm_nt(ap, bp, cp, n, k, m);
        else
            kgemm(ap, bp, cp, n, k, m);
    }
    auto node = make_node({static_cast<int>(B), static_cast<int>(n),
                           static_cast<int>(m)},
                          std::move(out));
    if (want_record({&a, &b})) {
        node->requires_grad = true;
        node->op = op;
        node->parents = {a.handle(), b.handle()};
        node->backprop = [B, n, k, m, nt](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad) pa.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int64_t i = 0; i < B; ++i) {
                const Scalar* g = self.grad.data() + i * n * m;
                const Scalar* ap = pa.value.data() + i * n * k;
                const Scalar* bp = pb.value.data() + i * k * m;
                if (!nt) {
                    // out = a*b : ga = g*b^T, gb = a^T*g
                    if (pa.requires_grad)
                        kgemm_nt(g, bp, pa.grad.data() + i * n * k, n, m, k);
                    if (pb.requires_grad)
                        kgemm_tn(ap, g, pb.grad.data() + i * k * m, n, k, m);
                } else {
                    // out = a*b^T : ga = g*b, gb = g^T*a
                    if (pa.requires_grad)
                        kgemm(g, bp, pa.grad.data() + i * n * k, n, m, k);
                    if (pb.requires_grad)
                        kgemm_tn(g, ap, pb.grad.data() + i * m * k, n, m, k);
                }
            }
        };
    }
    return Tensor(node);
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) {
    return batch_matmul("bmm", a, b, false);
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    return batch_matmul("bmm_nt", a, b, true);
}

// ---- softmax / layernorm -----------------------------------------------

Tensor softmax_lastdim(const Tensor& a) {
    int64_t L = last_dim("softmax", a);
    int64_t rows = a.size() / L;
    std::vector<Scalar> out(a.size());
    const auto& av = a.data();
    for (int64_t r = 0; r < rows; ++r) {
        const Scalar* x = av.data() + r * L;
        Scalar* y = out.data() + r * L;
        Scalar mx = x[0];
        for (int64_t i = 1; i < L; ++i) mx = std::max(mx, x[i]);
        Scalar sum = 0;
        for (int64_t i = 0; i < L; ++i) {
            y[i] = std::exp(x[i] - mx);
            sum += y[i];
        }
        for (int64_t i = 0; i < L; ++i) y[i] /= sum;
    }
    auto node = make_node(a.shape(), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "softmax";
        node->parents = {a.handle()};
        node->backprop = [L, rows](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const Scalar* y = self.value.data() + r * L;
                const Scalar* g = self.grad.data() + r * L;
                Scalar dot = 0;
                for (int64_t i = 0; i < L; ++i) dot += g[i] * y[i];
                Scalar* gx = pa.grad.data() + r * L;
                for (int64_t i = 0; i < L; ++i) gx[i] += y[i] * (g[i] - dot);
            }
        };
    }
    return Tensor(node);
}

Tensor masked_softmax_lastdim(const Tensor& a, const Tensor& mask) {
    check_same_rank_last("masked_softmax", a, mask);
    int64_t L = last_dim("masked_softmax", a);
    int64_t rows = a.size() / L;
    std::vector<Scalar> out(a.size(), 0.0);
    const auto& av = a.data();
    const auto& mv = mask.data();
    for (int64_t r = 0; r < rows; ++r) {
        const Scalar* x = av.data() + r * L;
        const Scalar* m = mv.data() + r * L;
        Scalar* y = out.data() + r * L;
        Scalar mx = 0;
        bool any = false;
        for (int64_t i = 0; i < L; ++i)
            if (m[i] != 0.0) {
                mx = any ? std::max(mx, x[i]) : x[i];
                any = true;
            }
        if (!any)
            fail("masked_softmax", "row " + std::to_string(r) + " fully masked");
        Scalar sum = 0;
        for (int64_t i = 0; i < L; ++i)
            if (m[i] != 0.0) {
                y[i] = std::exp(x[i] - mx);
                sum += y[i];
            }
        for (int64_t i = 0; i < L; ++i) y[i] /= sum;
    }
    auto node = make_node(a.shape(), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "masked_softmax";
        node->parents = {a.handle()};
        node->backprop = [L, rows](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const Scalar* y = self.value.data() + r * L;
                const Scalar* g = self.grad.data() + r * L;
                Scalar dot = 0;
                for (int64_t i = 0; i < L; ++i) dot += g[i] * y[i];
                Scalar* gx = pa.grad.data() + r * L;
                for (int64_t i = 0; i < L; ++i) gx[i] += y[i] * (g[i] - dot);
            }
        };
    }
    return Tensor(node);
}

Tensor layernorm_lastdim(const Tensor& a, Scalar eps) {
    int64_t L = last_dim("layernorm", a);
    int64_t rows = a.size() / L;
    std::vector<Scalar> out(a.size());
    std::vector<Scalar> inv_std(rows);
    const auto& av = a.data();
    for (int64_t r = 0; r < rows; ++r) {
        const Scalar* x = av.data() + r * L;
        Scalar* y = out.data() + r * L;
        Scalar mean = 0;
        for (int64_t i = 0; i < L; ++i) mean += x[i];
        mean /= static_cast<Scalar>(L);
        Scalar var = 0;
        for (int64_t i = 0; i < L; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= static_cast<Scalar>(L);
        Scalar s = 1.0 / std::sqrt(var + eps);
        inv_std[r] = s;
        for (int64_t i = 0; i < L; ++i) y[i] = (x[i] - mean) * s;
    }
    auto node = make_node(a.shape(), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "layernorm";
        node->parents = {a.handle()};
        node->backprop = [L, rows, inv_std](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const Scalar* y = self.value.data() + r * L;
                const Scalar* g = self.grad.data() + r * L;
                Scalar gmean = 0, gydot = 0;
                for (int64_t i = 0; i < L; ++i) {
                    gmean += g[i];
                    gydot += g[i] * y[i];
                }
                gmean /= static_cast<Scalar>(L);
                gydot /= static_cast<Scalar>(L);
                Scalar* gx = pa.grad.data() + r * L;
                for (int64_t i = 0; i < L; ++i)
                    gx[i] += inv_std[r] * (g[i] - gmean - y[i] * gydot);
            }
        };
    }
    return Tensor(node);
}

// ---- shape ops ---------------------------------------------------------

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail("concat", "no inputs");
    Shape lead = parts[0].shape();
    lead.pop_back();
    int64_t total = 0;
    for (const auto& p : parts) {
        Shape pl = p.shape();
        int w = pl.back();
        pl.pop_back();
        if (pl != lead)
            fail("concat", "leading dims differ: " + shape_str(parts[0].shape()) +
                               " vs " + shape_str(p.shape()));
        total += w;
    }
    int64_t rows = numel(lead);
    Shape out_shape = lead;
    out_shape.push_back(static_cast<int>(total));
    std::vector<Scalar> out(rows * total);
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t w = p.dim(-1);
        const auto& pv = p.data();
        for (int64_t r = 0; r < rows; ++r)
            std::copy(pv.begin() + r * w, pv.begin() + (r + 1) * w,
                      out.begin() + r * total + off);
        off += w;
    }
    auto node = make_node(std::move(out_shape), std::move(out));
    bool rec = grad_enabled();
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (rec && any) {
        node->requires_grad = true;
        node->op = "concat";
        for (const auto& p : parts) node->parents.push_back(p.handle());
        node->backprop = [rows, total](Node& self) {
            int64_t off2 = 0;
            for (auto& pp : self.parents) {
                int64_t w = pp->shape.back();
                if (pp->requires_grad) {
                    pp->ensure_grad();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < w; ++j)
                            pp->grad[r * w + j] +=
                                self.grad[r * total + off2 + j];
                }
                off2 += w;
            }
        };
    }
    return Tensor(node);
}

Tensor slice_lastdim(const Tensor& a, int start, int len) {
    int64_t L = last_dim("slice", a);
    if (start < 0 || len < 1 || start + len > L)
        fail("slice", "range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") out of " +
                          std::to_string(L));
    int64_t rows = a.size() / L;
    Shape out_shape = a.shape();
    out_shape.back() = len;
    std::vector<Scalar> out(rows * len);
    const auto& av = a.data();
    for (int64_t r = 0; r < rows; ++r)
        std::copy(av.begin() + r * L + start, av.begin() + r * L + start + len,
                  out.begin() + r * len);
    auto node = make_node(std::move(out_shape), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "slice";
        node->parents = {a.handle()};
        node->backprop = [rows, L, start, len](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < len; ++j)
                    pa.grad[r * L + start + j] += self.grad[r * len + j];
        };
    }
    return Tensor(node);
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& idx) {
    if (table.rank() != 2) fail("gather_rows", "table must be rank 2");
    int64_t E = table.dim(0), d = table.dim(1);
    for (int i : idx)
        if (i < 0 || i >= E)
            fail("gather_rows", "index " + std::to_string(i) + " out of " +
                                    std::to_string(E) + " rows");
    int64_t n = static_cast<int64_t>(idx.size());
    std::vector<Scalar> out(n * d);
    const auto& tv = table.data();
    for (int64_t r = 0; r < n; ++r)
        std::copy(tv.begin() + idx[r] * d, tv.begin() + (idx[r] + 1) * d,
                  out.begin() + r * d);
    auto node = make_node({static_cast<int>(n), static_cast<int>(d)},
                          std::move(out));
    if (want_record({&table})) {
        node->requires_grad = true;
        node->op = "gather_rows";
        node->parents = {table.handle()};
        node->backprop = [idx, d](Node& self) {
            Node& pt = *self.parents[0];
            pt.ensure_grad();
            for (size_t r = 0; r < idx.size(); ++r)
                for (int64_t j = 0; j < d; ++j)
                    pt.grad[idx[r] * d + j] += self.grad[r * d + j];
        };
    }
    return Tensor(node);
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        fail("reshape", shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                            " changes element count");
    auto node = make_node(std::move(new_shape), a.data());
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "reshape";
        node->parents = {a.handle()};
        node->backprop = [](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i];
        };
    }
    return Tensor(node);
}

// ---- reductions --------------------------------------------------------

namespace {

struct AxisSplit {
    int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Tensor& a, int axis) {
    int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) fail(op, "axis out of range");
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= a.shape()[i];
    s.len = a.shape()[axis];
    for (int i = axis + 1; i < r; ++i) s.inner *= a.shape()[i];
    if (s.len == 0) fail(op, "empty axis");
    return s;
}

Tensor reduce_axis(const char* op, const Tensor& a, int axis, Scalar scale) {
    AxisSplit s = split_axis(op, a, axis);
    int r = a.rank();
    if (axis < 0) axis += r;
    Shape out_shape;
    for (int i = 0; i < r; ++i)
        if (i != axis) out_shape.push_back(a.shape()[i]);
    if (out_shape.empty()) out_shape = {1};
    std::vector<Scalar> out(s.outer * s.inner, 0.0);
    const auto& av = a.data();
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t l = 0; l < s.len; ++l)
            for (int64_t i = 0; i < s.inner; ++i)
                out[o * s.inner + i] += av[(o * s.len + l) * s.inner + i];
    for (auto& v : out) v *= scale;
    auto node = make_node(std::move(out_shape), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = op;
        node->parents = {a.handle()};
        node->backprop = [s, scale](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t o = 0; o < s.outer; ++o)
                for (int64_t l = 0; l < s.len; ++l)
                    for (int64_t i = 0; i < s.inner; ++i)
                        pa.grad[(o * s.len + l) * s.inner + i] +=
                            self.grad[o * s.inner + i] * scale;
        };
    }
    return Tensor(node);
}

}  // namespace

Tensor sum_axis(const Tensor& a, int axis) {
    return reduce_axis("sum_axis", a, axis, 1.0);
}

Tensor mean_axis(const Tensor& a, int axis) {
    AxisSplit s = split_axis("mean_axis", a, axis);
    return reduce_axis("mean_axis", a, axis, 1.0 / static_cast<Scalar>(s.len));
}

Tensor sum_all(const Tensor& a) {
    Scalar acc = 0;
    for (Scalar v : a.data()) acc += v;
    auto node = make_node({1}, {acc});
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "sum_all";
        node->parents = {a.handle()};
        node->backprop = [](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (auto& g : pa.grad) g += self.grad[0];
        };
    }
    return Tensor(node);
}

Tensor mean_all(const Tensor& a) {
    if (a.size() == 0) fail("mean_all", "empty tensor");
    return mul_scalar(sum_all(a), 1.0 / static_cast<Scalar>(a.size()));
}

// ---- norms -------------------------------------------------------------

namespace {

Shape drop_last(const Tensor& a) {
    Shape s = a.shape();
    s.pop_back();
    if (s.empty()) s = {1};
    return s;
}

}  // namespace

Tensor l1_norm_lastdim(const Tensor& a) {
    int64_t L = last_dim("l1_norm", a);
    int64_t rows = a.size() / L;
    std::vector<Scalar> out(rows, 0.0);
    const auto& av = a.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < L; ++i) out[r] += std::fabs(av[r * L + i]);
    auto node = make_node(drop_last(a), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "l1_norm";
        node->parents = {a.handle()};
        node->backprop = [L, rows](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < L; ++i) {
                    Scalar x = pa.value[r * L + i];
                    Scalar s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
                    pa.grad[r * L + i] += self.grad[r] * s;
                }
        };
    }
    return Tensor(node);
}

Tensor l2_norm_lastdim(const Tensor& a) {
    int64_t L = last_dim("l2_norm", a);
    int64_t rows = a.size() / L;
    std::vector<Scalar> out(rows, 0.0);
    const auto& av = a.data();
    for (int64_t r = 0; r < rows; ++r) {
        Scalar acc = 0;
        for (int64_t i = 0; i < L; ++i) acc += av[r * L + i] * av[r * L + i];
        out[r] = std::sqrt(acc);
    }
    auto node = make_node(drop_last(a), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "l2_norm";
        node->parents = {a.handle()};
        node->backprop = [L, rows](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                if (self.value[r] == 0.0) continue;
                Scalar inv = self.grad[r] / self.value[r];
                for (int64_t i = 0; i < L; ++i)
                    pa.grad[r * L + i] += inv * pa.value[r * L + i];
            }
        };
    }
    return Tensor(node);
}

Tensor l2_normalize_lastdim(const Tensor& a) {
    constexpr Scalar kFloor = 1e-12;
    int64_t L = last_dim("l2_normalize", a);
    int64_t rows = a.size() / L;
    std::vector<Scalar> out(a.size());
    std::vector<Scalar> norms(rows);
    const auto& av = a.data();
    for (int64_t r = 0; r < rows; ++r) {
        Scalar acc = 0;
        for (int64_t i = 0; i < L; ++i) acc += av[r * L + i] * av[r * L + i];
        Scalar n = std::max(std::sqrt(acc), kFloor);
        norms[r] = n;
        for (int64_t i = 0; i < L; ++i) out[r * L + i] = av[r * L + i] / n;
    }
    auto node = make_node(a.shape(), std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "l2_normalize";
        node->parents = {a.handle()};
        node->backprop = [L, rows, norms](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const Scalar* y = self.value.data() + r * L;
                const Scalar* g = self.grad.data() + r * L;
                Scalar dot = 0;
                for (int64_t i = 0; i < L; ++i) dot += g[i] * y[i];
                Scalar* gx = pa.grad.data() + r * L;
                for (int64_t i = 0; i < L; ++i)
                    gx[i] += (g[i] - y[i] * dot) / norms[r];
            }
        };
    }
    return Tensor(node);
}

Tensor outer_add(const Tensor& u, const Tensor& v) {
    if (u.rank() != 1 || v.rank() != 1)
        fail("outer_add", "need rank-1 inputs, got " + shape_str(u.shape()) +
                              " and " + shape_str(v.shape()));
    int64_t n = u.dim(0), m = v.dim(0);
    std::vector<Scalar> out(n * m);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j)
            out[i * m + j] = u.data()[i] + v.data()[j];
    auto node = make_node({static_cast<int>(n), static_cast<int>(m)},
                          std::move(out));
    if (want_record({&u, &v})) {
        node->requires_grad = true;
        node->op = "outer_add";
        node->parents = {u.handle(), v.handle()};
        node->backprop = [n, m](Node& self) {
            Node& pu = *self.parents[0];
            Node& pv = *self.parents[1];
            if (pu.requires_grad) {
                pu.ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j)
                        pu.grad[i] += self.grad[i * m + j];
            }
            if (pv.requires_grad) {
                pv.ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j)
                        pv.grad[j] += self.grad[i * m + j];
            }
        };
    }
    return Tensor(node);
}

Tensor diag2d(const Tensor& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        fail("diag2d", "need square matrix, got " + shape_str(a.shape()));
    int64_t n = a.dim(0);
    std::vector<Scalar> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = a.data()[i * n + i];
    auto node = make_node({static_cast<int>(n)}, std::move(out));
    if (want_record({&a})) {
        node->requires_grad = true;
        node->op = "diag2d";
        node->parents = {a.handle()};
        node->backprop = [n](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                pa.grad[i * n + i] += self.grad[i];
        };
    }
    return Tensor(node);
}

Tensor detach(const Tensor& a) {
    return Tensor::from_data(a.shape(), a.data(), false);
}

// ---- gradient checking --------------------------------------------------

Scalar check_gradients(const std::function<Tensor(const Tensor&)>& f,
                       const Tensor& point, Scalar eps) {
    if (eps <= 0) fail("check_gradients", "eps must be positive");
    Tensor x = Tensor::from_data(point.shape(), point.data(), true);
    Tensor loss = f(x);
    if (loss.size() != 1) fail("check_gradients", "f must return a scalar");
    if (!std::isfinite(loss.item()))
        fail("check_gradients", "f(point) is not finite");
    backward(loss);
    std::vector<Scalar> analytic = x.grad();

    Scalar worst = 0;
    NoGradGuard ng;
    std::vector<Scalar> probe = point.data();
    for (size_t i = 0; i < probe.size(); ++i) {
        Scalar orig = probe[i];
        probe[i] = orig + eps;
        Scalar fp = f(Tensor::from_data(point.shape(), probe)).item();
        probe[i] = orig - eps;
        Scalar fm = f(Tensor::from_data(point.shape(), probe)).item();
        probe[i] = orig;
        Scalar num = (fp - fm) / (2 * eps);
        Scalar err = std::fabs(analytic[i] - num) / std::max(1.0, std::fabs(num));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace snag
