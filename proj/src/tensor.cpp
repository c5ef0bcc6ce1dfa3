#include "unihand/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace unihand {

namespace {

std::atomic<uint64_t> g_next_id{1};

NodePtr alloc_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

// Rows/cols view of an arbitrary-rank tensor: all leading dims are rows, the
// last dim is the feature axis. Lets softmax/layernorm handle batched input.
std::pair<int64_t, int64_t> row_view(const Tensor& x) {
    if (x.ndim() == 0) throw DimensionError("row op on scalar tensor");
    int64_t c = x.dim(x.ndim() - 1);
    return {x.size() / c, c};
}

} // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool needs_grad) {
    if (shape_numel(shape) != int64_t(data.size()))
        throw DimensionError("from_data: " + shape_str(shape) + " does not hold " +
                             std::to_string(data.size()) + " values");
    auto n = alloc_node(std::move(shape), std::move(data));
    n->needs_grad = needs_grad;
    return Tensor(n);
}

Tensor Tensor::zeros(Shape shape, bool needs_grad) {
    auto n = alloc_node(shape, std::vector<double>(size_t(shape_numel(shape)), 0.0));
    n->needs_grad = needs_grad;
    return Tensor(n);
}

Tensor Tensor::full(Shape shape, double v) {
    return Tensor(alloc_node(shape, std::vector<double>(size_t(shape_numel(shape)), v)));
}

std::vector<double>& Tensor::leaf_values() {
    if (n_->backprop) throw ValidationError("leaf_values on non-leaf node");
    return n_->value;
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return n_->value[0];
}

void Tensor::set_needs_grad(bool b) {
    if (n_->backprop) throw ValidationError("set_needs_grad on non-leaf node");
    n_->needs_grad = b;
}

const std::vector<double>& Tensor::grad() const {
    n_->ensure_grad();
    return n_->grad;
}

void Tensor::zero_grad() const {
    std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

Tensor make_node(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                 std::function<void(Node&)> backprop) {
    auto n = alloc_node(std::move(shape), std::move(value));
    bool any = false;
    n->parents.reserve(parents.size());
    for (auto& p : parents) {
        any = any || p.needs_grad();
        n->parents.push_back(p.node());
    }
    if (any) {
        n->needs_grad = true;
        n->backprop = std::move(backprop);
    }
    return Tensor(n);
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw DimensionError("backward: loss must be scalar");
    Node* root = loss.node().get();
    if (!root->needs_grad) return;

    // Iterative DFS; collect nodes that participate in the gradient.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            Node* q = p.get();
            if (q->needs_grad && seen.insert(q).second) stack.push_back(q);
        }
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

    for (Node* n : order) n->ensure_grad();
    root->grad[0] += 1.0;
    for (Node* n : order) {
        if (!n->backprop) continue;
        for (auto& p : n->parents)
            if (p->needs_grad) p->ensure_grad();
        n->backprop(*n);
    }
}

// ---------------- elementwise / structural ----------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
    return make_node(a.shape(), std::move(v), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node* p = n.parents[size_t(k)].get();
            if (!p->needs_grad) continue;
            for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
    return make_node(a.shape(), std::move(v), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->needs_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        if (pb->needs_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
    return make_node(a.shape(), std::move(v), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->needs_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
        if (pb->needs_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.values());
    for (auto& x : v) x *= c;
    return make_node(a.shape(), std::move(v), {a}, [c](Node& n) {
        Node* p = n.parents[0].get();
        for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * c;
    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    auto [r, c] = row_view(x);
    if (v.ndim() != 1 || v.dim(0) != c)
        throw DimensionError("add_rowvec: vector " + shape_str(v.shape()) +
                             " does not match row width " + std::to_string(c));
    std::vector<double> out(x.values());
    const auto& vv = v.values();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[size_t(i * c + j)] += vv[size_t(j)];
    return make_node(x.shape(), std::move(out), {x, v}, [r = r, c = c](Node& n) {
        Node* px = n.parents[0].get();
        Node* pv = n.parents[1].get();
        if (px->needs_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
        if (pv->needs_grad)
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) pv->grad[size_t(j)] += n.grad[size_t(i * c + j)];
    });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    auto [r, c] = row_view(x);
    if (v.ndim() != 1 || v.dim(0) != c)
        throw DimensionError("mul_rowvec: vector " + shape_str(v.shape()) +
                             " does not match row width " + std::to_string(c));
    std::vector<double> out(x.values());
    const auto& vv = v.values();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[size_t(i * c + j)] *= vv[size_t(j)];
    return make_node(x.shape(), std::move(out), {x, v}, [r = r, c = c](Node& n) {
        Node* px = n.parents[0].get();
        Node* pv = n.parents[1].get();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) {
                size_t k = size_t(i * c + j);
                if (px->needs_grad) px->grad[k] += n.grad[k] * pv->value[size_t(j)];
                if (pv->needs_grad) pv->grad[size_t(j)] += n.grad[k] * px->value[k];
            }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("matmul: expects 2-D operands, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(size_t(m) * n, 0.0);
    const double* A = a.values().data();
    const double* B = b.values().data();
    for (int i = 0; i < m; ++i) {
        double* Ci = out.data() + size_t(i) * n;
        const double* Ai = A + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            double aip = Ai[p];
            const double* Bp = B + size_t(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
        }
    }
    return make_node({m, n}, std::move(out), {a, b}, [m, k, n](Node& nd) {
        Node* pa = nd.parents[0].get();
        Node* pb = nd.parents[1].get();
        const double* G = nd.grad.data();
        if (pa->needs_grad) { // dA = G * B^T
            const double* B = pb->value.data();
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* Gi = G + size_t(i) * n;
                    const double* Bp = B + size_t(p) * n;
                    for (int j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                    pa->grad[size_t(i) * k + p] += s;
                }
        }
        if (pb->needs_grad) { // dB = A^T * G
            const double* A = pa->value.data();
            for (int p = 0; p < k; ++p) {
                double* dBp = pb->grad.data() + size_t(p) * n;
                for (int i = 0; i < m; ++i) {
                    double aip = A[size_t(i) * k + p];
                    const double* Gi = G + size_t(i) * n;
                    for (int j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose: expects 2-D, got " + shape_str(a.shape()));
    int r = a.rows(), c = a.cols();
    std::vector<double> out(size_t(r) * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[size_t(j) * r + i] = a.at(i, j);
    return make_node({c, r}, std::move(out), {a}, [r, c](Node& n) {
        Node* p = n.parents[0].get();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) p->grad[size_t(i) * c + j] += n.grad[size_t(j) * r + i];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no parts");
    int c = parts[0].cols(), r = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.cols() != c)
            throw DimensionError("concat_rows: column mismatch at " + shape_str(p.shape()));
        r += p.rows();
    }
    std::vector<double> out;
    out.reserve(size_t(r) * c);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_node({r, c}, std::move(out), parts, [](Node& n) {
        size_t off = 0;
        for (auto& pp : n.parents) {
            Node* p = pp.get();
            if (p->needs_grad)
                for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += n.grad[off + i];
            off += p->value.size();
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    int r = parts[0].rows(), c = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.rows() != r)
            throw DimensionError("concat_cols: row mismatch at " + shape_str(p.shape()));
        c += p.cols();
    }
    std::vector<double> out(size_t(r) * c);
    int off = 0;
    for (const auto& p : parts) {
        int pc = p.cols();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j) out[size_t(i) * c + off + j] = p.at(i, j);
        off += pc;
    }
    return make_node({r, c}, std::move(out), parts, [r, c](Node& n) {
        int off = 0;
        for (auto& pp : n.parents) {
            Node* p = pp.get();
            int pc = p->shape[1];
            if (p->needs_grad)
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < pc; ++j)
                        p->grad[size_t(i) * pc + j] += n.grad[size_t(i) * c + off + j];
            off += pc;
        }
    });
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
    if (x.ndim() != 2) throw DimensionError("slice_rows: expects 2-D");
    if (r0 < 0 || r1 > x.rows() || r0 > r1)
        throw DimensionError("slice_rows: range [" + std::to_string(r0) + "," +
                             std::to_string(r1) + ") out of " + std::to_string(x.rows()));
    int c = x.cols();
    std::vector<double> out(x.values().begin() + size_t(r0) * c,
                            x.values().begin() + size_t(r1) * c);
    return make_node({r1 - r0, c}, std::move(out), {x}, [r0, c](Node& n) {
        Node* p = n.parents[0].get();
        size_t base = size_t(r0) * c;
        for (size_t i = 0; i < n.grad.size(); ++i) p->grad[base + i] += n.grad[i];
    });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    if (x.ndim() != 2) throw DimensionError("slice_cols: expects 2-D");
    if (c0 < 0 || c1 > x.cols() || c0 > c1)
        throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") out of " + std::to_string(x.cols()));
    int r = x.rows(), c = x.cols(), w = c1 - c0;
    std::vector<double> out(size_t(r) * w);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j) out[size_t(i) * w + j] = x.at(i, c0 + j);
    return make_node({r, w}, std::move(out), {x}, [r, c, c0, w](Node& n) {
        Node* p = n.parents[0].get();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j)
                p->grad[size_t(i) * c + c0 + j] += n.grad[size_t(i) * w + j];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                             " changes element count");
    std::vector<double> v(x.values());
    return make_node(std::move(shape), std::move(v), {x}, [](Node& n) {
        Node* p = n.parents[0].get();
        for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    });
}

Tensor detach(const Tensor& x) {
    return Tensor::from_data(x.shape(), x.values(), false);
}

// ---------------- nonlinearities ----------------

namespace {
double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }
} // namespace

Tensor silu(const Tensor& x) {
    std::vector<double> v(x.values());
    for (auto& t : v) t = t * sigmoid_d(t);
    return make_node(x.shape(), std::move(v), {x}, [](Node& n) {
        Node* p = n.parents[0].get();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            double xv = p->value[i];
            double s = sigmoid_d(xv);
            p->grad[i] += n.grad[i] * (s * (1.0 + xv * (1.0 - s)));
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> v(x.values());
    for (auto& t : v) t = sigmoid_d(t);
    return make_node(x.shape(), std::move(v), {x}, [](Node& n) {
        Node* p = n.parents[0].get();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            double s = n.value[i];
            p->grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor softplus(const Tensor& x) {
    std::vector<double> v(x.values());
    for (auto& t : v) {
        if (t > 30.0) {
            // softplus(x) == x to double precision
        } else if (t < -30.0) {
            t = std::exp(t);
        } else {
            t = std::log1p(std::exp(t));
        }
    }
    return make_node(x.shape(), std::move(v), {x}, [](Node& n) {
        Node* p = n.parents[0].get();
        for (size_t i = 0; i < n.grad.size(); ++i)
            p->grad[i] += n.grad[i] * sigmoid_d(p->value[i]);
    });
}

Tensor log_t(const Tensor& x) {
    std::vector<double> v(x.values());
    for (auto& t : v) t = std::log(t);
    return make_node(x.shape(), std::move(v), {x}, [](Node& n) {
        Node* p = n.parents[0].get();
        for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] / p->value[i];
    });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    std::vector<double> v(x.values());
    for (auto& t : v) t = std::min(std::max(t, lo), hi);
    return make_node(x.shape(), std::move(v), {x}, [lo, hi](Node& n) {
        Node* p = n.parents[0].get();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            double xv = p->value[i];
            if (xv > lo && xv < hi) p->grad[i] += n.grad[i];
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    auto [r, c] = row_view(x);
    std::vector<double> v(x.values());
    for (int64_t i = 0; i < r; ++i) {
        double* row = v.data() + i * c;
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (int64_t j = 0; j < c; ++j) row[j] /= s;
    }
    return make_node(x.shape(), std::move(v), {x}, [r = r, c = c](Node& n) {
        Node* p = n.parents[0].get();
        for (int64_t i = 0; i < r; ++i) {
            const double* y = n.value.data() + i * c;
            const double* g = n.grad.data() + i * c;
            double dot = 0.0;
            for (int64_t j = 0; j < c; ++j) dot += y[j] * g[j];
            double* pg = p->grad.data() + i * c;
            for (int64_t j = 0; j < c; ++j) pg[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor layernorm_rows(const Tensor& x, double eps) {
    auto [r, c] = row_view(x);
    std::vector<double> v(x.values());
    std::vector<double> inv_std(static_cast<size_t>(r), 0.0);
    for (int64_t i = 0; i < r; ++i) {
        double* row = v.data() + i * c;
        double mean = 0.0;
        for (int64_t j = 0; j < c; ++j) mean += row[j];
        mean /= double(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= double(c);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[size_t(i)] = is;
        for (int64_t j = 0; j < c; ++j) row[j] = (row[j] - mean) * is;
    }
    return make_node(x.shape(), std::move(v), {x},
                     [r = r, c = c, inv_std = std::move(inv_std)](Node& n) {
                         Node* p = n.parents[0].get();
                         for (int64_t i = 0; i < r; ++i) {
                             const double* xh = n.value.data() + i * c; // normalized values
                             const double* g = n.grad.data() + i * c;
                             double gm = 0.0, gxh = 0.0;
                             for (int64_t j = 0; j < c; ++j) {
                                 gm += g[j];
                                 gxh += g[j] * xh[j];
                             }
                             gm /= double(c);
                             gxh /= double(c);
                             double is = inv_std[size_t(i)];
                             double* pg = p->grad.data() + i * c;
                             for (int64_t j = 0; j < c; ++j)
                                 pg[j] += is * (g[j] - gm - xh[j] * gxh);
                         }
                     });
}

// ---------------- reductions ----------------

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double t : x.values()) s += t;
    return make_node({1}, {s}, {x}, [](Node& n) {
        Node* p = n.parents[0].get();
        double g = n.grad[0];
        for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
}

Tensor mean_all(const Tensor& x) {
    if (x.size() == 0) throw DimensionError("mean_all: empty tensor");
    double s = 0.0;
    for (double t : x.values()) s += t;
    double inv = 1.0 / double(x.size());
    return make_node({1}, {s * inv}, {x}, [inv](Node& n) {
        Node* p = n.parents[0].get();
        double g = n.grad[0] * inv;
        for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
}

Tensor sse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sse");
    const auto& av = a.values();
    const auto& bv = b.values();
    double s = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        double d = av[i] - bv[i];
        s += d * d;
    }
    return make_node({1}, {s}, {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        double g = n.grad[0];
        for (size_t i = 0; i < pa->value.size(); ++i) {
            double d = 2.0 * g * (pa->value[i] - pb->value[i]);
            if (pa->needs_grad) pa->grad[i] += d;
            if (pb->needs_grad) pb->grad[i] -= d;
        }
    });
}

// ---------------- conv3d ----------------

Tensor conv3d(const Tensor& grid, const Tensor& kernels, int stride, const Tensor& bias) {
    if (grid.ndim() != 4) throw DimensionError("conv3d: grid must be [C,D,H,W], got " +
                                               shape_str(grid.shape()));
    if (kernels.ndim() != 5)
        throw DimensionError("conv3d: kernels must be [O,C,k,k,k], got " +
                             shape_str(kernels.shape()));
    int C = grid.dim(0), D = grid.dim(1), H = grid.dim(2), W = grid.dim(3);
    int O = kernels.dim(0), KC = kernels.dim(1), k = kernels.dim(2);
    if (kernels.dim(3) != k || kernels.dim(4) != k)
        throw DimensionError("conv3d: kernel must be cubic");
    if (KC != C) throw DimensionError("conv3d: kernel channels " + std::to_string(KC) +
                                      " != grid channels " + std::to_string(C));
    if (stride < 1) throw DimensionError("conv3d: stride must be >= 1");
    if (k > D || k > H || k > W)
        throw DimensionError("conv3d: kernel size " + std::to_string(k) +
                             " exceeds grid extent " + shape_str(grid.shape()));
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != O))
        throw DimensionError("conv3d: bias must be [O]");

    int Do = (D - k) / stride + 1, Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
    std::vector<double> out(size_t(O) * Do * Ho * Wo, 0.0);
    const double* G = grid.values().data();
    const double* K = kernels.values().data();
    auto gidx = [&](int c, int z, int y, int x) {
        return ((size_t(c) * D + z) * H + y) * W + x;
    };
    auto kidx = [&](int o, int c, int z, int y, int x) {
        return (((size_t(o) * C + c) * k + z) * k + y) * k + x;
    };
    auto oidx = [&](int o, int z, int y, int x) {
        return ((size_t(o) * Do + z) * Ho + y) * Wo + x;
    };
    for (int o = 0; o < O; ++o)
        for (int z = 0; z < Do; ++z)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    double s = bias.defined() ? bias.at(o) : 0.0;
                    for (int c = 0; c < C; ++c)
                        for (int kz = 0; kz < k; ++kz)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    s += G[gidx(c, z * stride + kz, y * stride + ky,
                                                x * stride + kx)] *
                                         K[kidx(o, c, kz, ky, kx)];
                    out[oidx(o, z, y, x)] = s;
                }

    std::vector<Tensor> parents{grid, kernels};
    if (bias.defined()) parents.push_back(bias);
    return make_node(
        {O, Do, Ho, Wo}, std::move(out), parents,
        [C, D, H, W, O, k, stride, Do, Ho, Wo](Node& n) {
            Node* pg = n.parents[0].get();
            Node* pk = n.parents[1].get();
            Node* pb = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
            auto gidx = [&](int c, int z, int y, int x) {
                return ((size_t(c) * D + z) * H + y) * W + x;
            };
            auto kidx = [&](int o, int c, int z, int y, int x) {
                return (((size_t(o) * C + c) * k + z) * k + y) * k + x;
            };
            auto oidx = [&](int o, int z, int y, int x) {
                return ((size_t(o) * Do + z) * Ho + y) * Wo + x;
            };
            for (int o = 0; o < O; ++o)
                for (int z = 0; z < Do; ++z)
                    for (int y = 0; y < Ho; ++y)
                        for (int x = 0; x < Wo; ++x) {
                            double g = n.grad[oidx(o, z, y, x)];
                            if (g == 0.0) continue;
                            if (pb && pb->needs_grad) pb->grad[size_t(o)] += g;
                            for (int c = 0; c < C; ++c)
                                for (int kz = 0; kz < k; ++kz)
                                    for (int ky = 0; ky < k; ++ky)
                                        for (int kx = 0; kx < k; ++kx) {
                                            size_t gi = gidx(c, z * stride + kz, y * stride + ky,
                                                             x * stride + kx);
                                            size_t ki = kidx(o, c, kz, ky, kx);
                                            if (pg->needs_grad)
                                                pg->grad[gi] += g * pk->value[ki];
                                            if (pk->needs_grad)
                                                pk->grad[ki] += g * pg->value[gi];
                                        }
                        }
        });
}

} // namespace unihand
