#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffplan/errors.hpp"
#include "diffplan/rng.hpp"

namespace diffplan {

// Dense row-major tensor of doubles with reverse-mode autodiff. Tensors are
// cheap value handles onto shared nodes; ops build a DAG that GradTape::backward
// replays in reverse topological order. A graph is confined to one thread.
struct TensorNode {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated on demand, same length as val
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward;  // adds into parents' grads

    std::vector<double>& grad_buf();
};

class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int size() const { return static_cast<int>(node_->val.size()); }
    int rows() const;
    int cols() const;

    std::vector<double>& data() { return node_->val; }
    const std::vector<double>& data() const { return node_->val; }
    std::vector<double>& grad() { return node_->grad_buf(); }
    bool requires_grad() const { return node_->requires_grad; }

    double item() const;
    double at(int r, int c) const;

    std::shared_ptr<TensorNode> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<TensorNode> n);

private:
    std::shared_ptr<TensorNode> node_;
};

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_eps(const Tensor& a, double eps);
Tensor pow_const(const Tensor& a, double p);
Tensor abs_t(const Tensor& a);
Tensor smooth_l1(const Tensor& residual, double delta);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// bias broadcast over the trailing dimension of a 2-D tensor
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// --- shape ---
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int start, int count);
Tensor slice_cols(const Tensor& a, int start, int count);
Tensor row_select(const Tensor& table, int index);
Tensor cumsum_rows(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> shape);

// --- reductions & normalization ---
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a, int axis = -1);
Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Per-head scaled dot-product attention over already-projected q/k/v
// (feature dim split into `heads`); heads are concatenated back. The output
// projection is the caller's linear layer.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// Cuts the graph: result is a grad-free leaf with copied values.
Tensor detach(const Tensor& a);

void check_finite(const Tensor& a, const std::string& context);

class GradTape {
public:
    // Reverse pass from a scalar root; accumulates into leaf grads.
    static void backward(const Tensor& root);
};

}  // namespace diffplan
