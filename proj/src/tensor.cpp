#include "diffplan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace diffplan {

namespace {

int shape_size(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape");
        n *= d;
    }
    return n;
}

std::shared_ptr<TensorNode> make_node(std::vector<int> shape,
                                      std::vector<std::shared_ptr<TensorNode>> parents) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->val.resize(shape_size(n->shape));
    for (const auto& p : parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    n->parents = std::move(parents);
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch");
}

void require_2d(const Tensor& a, const char* op) {
    if (a.shape().size() != 2)
        throw DimensionError(std::string(op) + ": expected a 2-D tensor");
}

// Elementwise op with value map f and gradient factor df(x, y).
template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
    auto n = make_node(a.shape(), {a.node()});
    const auto& av = a.data();
    for (size_t i = 0; i < av.size(); ++i) n->val[i] = f(av[i]);
    if (n->requires_grad) {
        auto an = a.node();
        auto self = n.get();
        n->backward = [an, self, df]() {
            auto& ag = an->grad_buf();
            for (size_t i = 0; i < ag.size(); ++i)
                ag[i] += df(an->val[i], self->val[i]) * self->grad[i];
        };
    }
    return Tensor::wrap(n);
}

}  // namespace

std::vector<double>& TensorNode::grad_buf() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    return grad;
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    node_ = std::make_shared<TensorNode>();
    if (static_cast<int>(data.size()) != shape_size(shape))
        throw DimensionError("tensor data length does not match shape");
    node_->shape = std::move(shape);
    node_->val = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    const int n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    const int n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    const int n = shape_size(shape);
    std::vector<double> d(n);
    for (auto& x : d) x = rng.gauss() * stddev;
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

int Tensor::rows() const {
    require_2d(*this, "rows");
    return node_->shape[0];
}

int Tensor::cols() const {
    require_2d(*this, "cols");
    return node_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item: tensor is not a scalar");
    return node_->val[0];
}

double Tensor::at(int r, int c) const {
    require_2d(*this, "at");
    if (r < 0 || r >= node_->shape[0] || c < 0 || c >= node_->shape[1])
        throw IndexError("at: index out of range");
    return node_->val[static_cast<size_t>(r) * node_->shape[1] + c];
}

Tensor Tensor::wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

// --- elementwise ---

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto n = make_node(a.shape(), {a.node(), b.node()});
    const auto &av = a.data(), &bv = b.data();
    for (size_t i = 0; i < av.size(); ++i) n->val[i] = av[i] + bv[i];
    if (n->requires_grad) {
        auto an = a.node(), bn = b.node();
        auto self = n.get();
        n->backward = [an, bn, self]() {
            if (an->requires_grad) {
                auto& g = an->grad_buf();
                for (size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->grad_buf();
                for (size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto n = make_node(a.shape(), {a.node(), b.node()});
    const auto &av = a.data(), &bv = b.data();
    for (size_t i = 0; i < av.size(); ++i) n->val[i] = av[i] * bv[i];
    if (n->requires_grad) {
        auto an = a.node(), bn = b.node();
        auto self = n.get();
        n->backward = [an, bn, self]() {
            if (an->requires_grad) {
                auto& g = an->grad_buf();
                for (size_t i = 0; i < g.size(); ++i) g[i] += bn->val[i] * self->grad[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->grad_buf();
                for (size_t i = 0; i < g.size(); ++i) g[i] += an->val[i] * self->grad[i];
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return c * x; },
                    [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                   x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

Tensor tanh_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor log_eps(const Tensor& a, double eps) {
    return unary_op(a, [eps](double x) { return std::log(x + eps); },
                    [eps](double x, double) { return 1.0 / (x + eps); });
}

Tensor pow_const(const Tensor& a, double p) {
    return unary_op(a, [p](double x) { return std::pow(x, p); },
                    [p](double x, double) {
                        if (x == 0.0 && p < 1.0) return 0.0;
                        return p * std::pow(x, p - 1.0);
                    });
}

Tensor abs_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::fabs(x); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor smooth_l1(const Tensor& residual, double delta) {
    if (delta <= 0.0) throw ConfigError("smooth_l1: delta must be positive");
    return unary_op(
        residual,
        [delta](double z) {
            return std::fabs(z) < delta ? 0.5 * z * z / delta : std::fabs(z) - 0.5 * delta;
        },
        [delta](double z, double) {
            return std::clamp(z / delta, -1.0, 1.0);
        });
}

// --- linear algebra ---

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], p = b.shape()[1];
    if (k != k2) throw DimensionError("matmul: inner dimensions do not match");
    auto n = make_node({m, p}, {a.node(), b.node()});
    const auto &av = a.data(), &bv = b.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) {
            const double x = av[i * k + j];
            if (x == 0.0) continue;
            for (int c = 0; c < p; ++c) n->val[i * p + c] += x * bv[j * p + c];
        }
    if (n->requires_grad) {
        auto an = a.node(), bn = b.node();
        auto self = n.get();
        n->backward = [an, bn, self, m, k, p]() {
            // dA = dY B^T, dB = A^T dY
            if (an->requires_grad) {
                auto& ga = an->grad_buf();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < k; ++j) {
                        double acc = 0.0;
                        for (int c = 0; c < p; ++c)
                            acc += self->grad[i * p + c] * bn->val[j * p + c];
                        ga[i * k + j] += acc;
                    }
            }
            if (bn->requires_grad) {
                auto& gb = bn->grad_buf();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < k; ++j) {
                        const double x = an->val[i * k + j];
                        if (x == 0.0) continue;
                        for (int c = 0; c < p; ++c)
                            gb[j * p + c] += x * self->grad[i * p + c];
                    }
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int r = a.shape()[0], c = a.shape()[1];
    auto n = make_node({c, r}, {a.node()});
    const auto& av = a.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n->val[j * r + i] = av[i * c + j];
    if (n->requires_grad) {
        auto an = a.node();
        auto self = n.get();
        n->backward = [an, self, r, c]() {
            auto& g = an->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) g[i * c + j] += self->grad[j * r + i];
        };
    }
    return Tensor::wrap(n);
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    require_2d(a, "add_bias");
    const int r = a.shape()[0], c = a.shape()[1];
    if (bias.size() != c) throw DimensionError("add_bias: bias length != trailing dim");
    auto n = make_node({r, c}, {a.node(), bias.node()});
    const auto &av = a.data(), &bv = bias.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n->val[i * c + j] = av[i * c + j] + bv[j];
    if (n->requires_grad) {
        auto an = a.node(), bn = bias.node();
        auto self = n.get();
        n->backward = [an, bn, self, r, c]() {
            if (an->requires_grad) {
                auto& g = an->grad_buf();
                for (size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->grad_buf();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) g[j] += self->grad[i * c + j];
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_bias(matmul(x, w), b);
}

// --- shape ---

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const int c = parts[0].cols();
    int rtot = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: column mismatch");
        rtot += p.rows();
        parents.push_back(p.node());
    }
    auto n = make_node({rtot, c}, parents);
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), n->val.begin() + off);
        off += p.data().size();
    }
    if (n->requires_grad) {
        auto self = n.get();
        auto ps = parents;
        n->backward = [self, ps]() {
            size_t off = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) {
                    auto& g = p->grad_buf();
                    for (size_t i = 0; i < g.size(); ++i) g[i] += self->grad[off + i];
                }
                off += p->val.size();
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const int r = parts[0].rows();
    int ctot = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::vector<int> widths;
    for (const auto& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: row mismatch");
        ctot += p.cols();
        widths.push_back(p.cols());
        parents.push_back(p.node());
    }
    auto n = make_node({r, ctot}, parents);
    int coff = 0;
    for (size_t k = 0; k < parents.size(); ++k) {
        const int w = widths[k];
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j)
                n->val[i * ctot + coff + j] = parents[k]->val[i * w + j];
        coff += w;
    }
    if (n->requires_grad) {
        auto self = n.get();
        auto ps = parents;
        n->backward = [self, ps, widths, r, ctot]() {
            int coff = 0;
            for (size_t k = 0; k < ps.size(); ++k) {
                const int w = widths[k];
                if (ps[k]->requires_grad) {
                    auto& g = ps[k]->grad_buf();
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < w; ++j)
                            g[i * w + j] += self->grad[i * ctot + coff + j];
                }
                coff += w;
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor slice_rows(const Tensor& a, int start, int count) {
    require_2d(a, "slice_rows");
    const int r = a.shape()[0], c = a.shape()[1];
    if (start < 0 || count < 0 || start + count > r)
        throw DimensionError("slice_rows: range out of bounds");
    auto n = make_node({count, c}, {a.node()});
    const auto& av = a.data();
    std::copy(av.begin() + static_cast<size_t>(start) * c,
              av.begin() + static_cast<size_t>(start + count) * c, n->val.begin());
    if (n->requires_grad) {
        auto an = a.node();
        auto self = n.get();
        n->backward = [an, self, start, c]() {
            auto& g = an->grad_buf();
            for (size_t i = 0; i < self->val.size(); ++i)
                g[static_cast<size_t>(start) * c + i] += self->grad[i];
        };
    }
    return Tensor::wrap(n);
}

Tensor slice_cols(const Tensor& a, int start, int count) {
    require_2d(a, "slice_cols");
    const int r = a.shape()[0], c = a.shape()[1];
    if (start < 0 || count < 0 || start + count > c)
        throw DimensionError("slice_cols: range out of bounds");
    auto n = make_node({r, count}, {a.node()});
    const auto& av = a.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < count; ++j) n->val[i * count + j] = av[i * c + start + j];
    if (n->requires_grad) {
        auto an = a.node();
        auto self = n.get();
        n->backward = [an, self, start, count, r, c]() {
            auto& g = an->grad_buf();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < count; ++j)
                    g[i * c + start + j] += self->grad[i * count + j];
        };
    }
    return Tensor::wrap(n);
}

Tensor row_select(const Tensor& table, int index) {
    require_2d(table, "row_select");
    if (index < 0 || index >= table.shape()[0])
        throw IndexError("row_select: index out of range");
    return slice_rows(table, index, 1);
}

Tensor cumsum_rows(const Tensor& a) {
    require_2d(a, "cumsum_rows");
    const int r = a.shape()[0], c = a.shape()[1];
    auto n = make_node({r, c}, {a.node()});
    const auto& av = a.data();
    for (int j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int i = 0; i < r; ++i) {
            acc += av[i * c + j];
            n->val[i * c + j] = acc;
        }
    }
    if (n->requires_grad) {
        auto an = a.node();
        auto self = n.get();
        n->backward = [an, self, r, c]() {
            auto& g = an->grad_buf();
            for (int j = 0; j < c; ++j) {
                double acc = 0.0;
                for (int i = r - 1; i >= 0; --i) {
                    acc += self->grad[i * c + j];
                    g[i * c + j] += acc;
                }
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_size(shape) != a.size())
        throw DimensionError("reshape: element count mismatch");
    auto n = make_node(std::move(shape), {a.node()});
    n->val = a.data();
    if (n->requires_grad) {
        auto an = a.node();
        auto self = n.get();
        n->backward = [an, self]() {
            auto& g = an->grad_buf();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
        };
    }
    return Tensor::wrap(n);
}

// --- reductions & normalization ---

Tensor sum(const Tensor& a) {
    auto n = make_node({1}, {a.node()});
    n->val[0] = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    if (n->requires_grad) {
        auto an = a.node();
        auto self = n.get();
        n->backward = [an, self]() {
            auto& g = an->grad_buf();
            for (auto& x : g) x += self->grad[0];
        };
    }
    return Tensor::wrap(n);
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / a.size()); }

Tensor softmax(const Tensor& a, int axis) {
    require_2d(a, "softmax");
    if (axis == -1) axis = 1;
    if (axis != 0 && axis != 1) throw DimensionError("softmax: invalid axis");
    if (axis == 0) return transpose(softmax(transpose(a), 1));
    const int r = a.shape()[0], c = a.shape()[1];
    auto n = make_node({r, c}, {a.node()});
    const auto& av = a.data();
    for (int i = 0; i < r; ++i) {
        double mx = av[i * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, av[i * c + j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            n->val[i * c + j] = std::exp(av[i * c + j] - mx);
            z += n->val[i * c + j];
        }
        for (int j = 0; j < c; ++j) n->val[i * c + j] /= z;
    }
    if (n->requires_grad) {
        auto an = a.node();
        auto self = n.get();
        n->backward = [an, self, r, c]() {
            auto& g = an->grad_buf();
            for (int i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j)
                    dot += self->grad[i * c + j] * self->val[i * c + j];
                for (int j = 0; j < c; ++j)
                    g[i * c + j] += self->val[i * c + j] * (self->grad[i * c + j] - dot);
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(a, "layernorm");
    const int r = a.shape()[0], c = a.shape()[1];
    if (gain.size() != c || bias.size() != c)
        throw DimensionError("layernorm: affine parameter length != feature dim");
    auto n = make_node({r, c}, {a.node(), gain.node(), bias.node()});
    const auto &av = a.data(), &gv = gain.data(), &bv = bias.data();
    // keep per-row xhat and 1/s for backward
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(r) * c);
    auto inv_s = std::make_shared<std::vector<double>>(r);
    for (int i = 0; i < r; ++i) {
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += av[i * c + j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = av[i * c + j] - mu;
            var += d * d;
        }
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_s)[i] = is;
        for (int j = 0; j < c; ++j) {
            const double xh = (av[i * c + j] - mu) * is;
            (*xhat)[i * c + j] = xh;
            n->val[i * c + j] = xh * gv[j] + bv[j];
        }
    }
    if (n->requires_grad) {
        auto an = a.node(), gn = gain.node(), bn = bias.node();
        auto self = n.get();
        n->backward = [an, gn, bn, self, xhat, inv_s, r, c]() {
            for (int i = 0; i < r; ++i) {
                double m1 = 0.0, m2 = 0.0;  // mean(g*dy), mean(g*dy*xhat)
                for (int j = 0; j < c; ++j) {
                    const double gd = gn->val[j] * self->grad[i * c + j];
                    m1 += gd;
                    m2 += gd * (*xhat)[i * c + j];
                }
                m1 /= c;
                m2 /= c;
                if (an->requires_grad) {
                    auto& g = an->grad_buf();
                    for (int j = 0; j < c; ++j) {
                        const double gd = gn->val[j] * self->grad[i * c + j];
                        g[i * c + j] += (gd - m1 - (*xhat)[i * c + j] * m2) * (*inv_s)[i];
                    }
                }
                if (gn->requires_grad) {
                    auto& g = gn->grad_buf();
                    for (int j = 0; j < c; ++j)
                        g[j] += self->grad[i * c + j] * (*xhat)[i * c + j];
                }
                if (bn->requires_grad) {
                    auto& g = bn->grad_buf();
                    for (int j = 0; j < c; ++j) g[j] += self->grad[i * c + j];
                }
            }
        };
    }
    return Tensor::wrap(n);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    require_2d(q, "attention");
    require_2d(k, "attention");
    require_2d(v, "attention");
    const int d = q.cols();
    if (k.cols() != d || v.cols() != d)
        throw DimensionError("attention: q/k/v feature dims differ");
    if (k.rows() != v.rows())
        throw DimensionError("attention: k and v lengths differ");
    if (heads < 1 || d % heads != 0)
        throw ConfigError("attention: feature dim not divisible by head count");
    const int dh = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor att = softmax(scale(matmul(qh, transpose(kh)), s), 1);
        outs.push_back(matmul(att, vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

Tensor detach(const Tensor& a) {
    return Tensor(a.shape(), a.data(), false);
}

void check_finite(const Tensor& a, const std::string& context) {
    for (double x : a.data())
        if (!std::isfinite(x))
            throw NumericError("non-finite value in " + context);
}

void GradTape::backward(const Tensor& root) {
    if (root.size() != 1) throw DimensionError("backward: root must be a scalar");
    if (!root.requires_grad()) return;
    // iterative topological order over the requires_grad subgraph
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.push_back({root.node().get(), 0});
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->grad_buf()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        (*it)->grad_buf();  // ensure allocated even if no consumer wrote
        if ((*it)->backward) (*it)->backward();
    }
}

}  // namespace diffplan
