#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace snag {

using Scalar = double;
using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded value in the computation graph. Backprop closures read
// self.grad / self.value and accumulate into the parents' grad buffers.
struct Node {
    Shape shape;
    std::vector<Scalar> value;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Scalar v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<Scalar> data,
                            bool requires_grad = false);
    static Tensor scalar(Scalar v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int i) const;  // negative i counts from the back
    int64_t size() const;
    const std::vector<Scalar>& data() const;
    std::vector<Scalar>& mutable_data();
    Scalar item() const;
    Scalar at(int64_t i) const { return data()[i]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool b);
    const std::vector<Scalar>& grad() const;
    void zero_grad();

    Node* node() const { return node_.get(); }
    NodePtr handle() const { return node_; }

private:
    NodePtr node_;
};

// Disables graph recording (evaluation passes). Nestable.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Topologically ordered record of the ops reachable from a scalar loss.
// backward() seeds d(loss)/d(loss) = 1 and replays the record in reverse,
// accumulating one gradient per requires_grad leaf.
class GradTape {
public:
    explicit GradTape(const Tensor& loss);
    void backward();
    size_t num_ops() const { return order_.size(); }

private:
    NodePtr root_;
    std::vector<Node*> order_;
};

void backward(const Tensor& loss);

// ---- primitives --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, Scalar c);
Tensor mul_scalar(const Tensor& a, Scalar c);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, Scalar slope = 0.2);
Tensor elu(const Tensor& a, Scalar alpha = 1.0);
Tensor abs(const Tensor& a);

// [..., n, k] x [k, m] -> [..., n, m]
Tensor matmul(const Tensor& a, const Tensor& b);
// [n, k] x [m, k] -> [n, m]  (a * b^T)
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// [B, n, k] x [B, k, m] -> [B, n, m]
Tensor bmm(const Tensor& a, const Tensor& b);
// [B, n, k] x [B, m, k] -> [B, n, m]  (batch a * b^T)
Tensor bmm_nt(const Tensor& a, const Tensor& b);

Tensor softmax_lastdim(const Tensor& a);
// mask holds 0/1 constants, same shape as a; masked-out entries get weight 0.
Tensor masked_softmax_lastdim(const Tensor& a, const Tensor& mask);
Tensor layernorm_lastdim(const Tensor& a, Scalar eps = 1e-5);

Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor slice_lastdim(const Tensor& a, int start, int len);
Tensor gather_rows(const Tensor& table, const std::vector<int>& idx);
Tensor reshape(const Tensor& a, Shape new_shape);

Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor l1_norm_lastdim(const Tensor& a);
Tensor l2_norm_lastdim(const Tensor& a);
Tensor l2_normalize_lastdim(const Tensor& a);

// u: [n], v: [m] -> out[i,j] = u[i] + v[j]
Tensor outer_add(const Tensor& u, const Tensor& v);
// [B, B] -> [B] main diagonal
Tensor diag2d(const Tensor& a);

Tensor detach(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, Scalar c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, Scalar c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, Scalar c) { return mul_scalar(a, c); }
inline Tensor operator*(Scalar c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(Scalar c, const Tensor& a) { return add_scalar(neg(a), c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Max over coordinates of |analytic - central difference| / max(1, |cd|)
// for a scalar-valued f evaluated at point.
Scalar check_gradients(const std::function<Tensor(const Tensor&)>& f,
                       const Tensor& point, Scalar eps);

}  // namespace snag
