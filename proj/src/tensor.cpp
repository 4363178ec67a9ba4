#include "cacophony/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace cacophony {

namespace {

std::atomic<int> g_precision{static_cast<int>(Precision::f32)};
std::atomic<uint64_t> g_node_counter{0};
std::atomic<int64_t> g_live_tensors{0};

struct LiveCounter {
    LiveCounter() { g_live_tensors.fetch_add(1); }
    ~LiveCounter() { g_live_tensors.fetch_sub(1); }
};

bool f32_mode() { return static_cast<Precision>(g_precision.load()) == Precision::f32; }

// Quantize a buffer to float32 values when running in f32 mode.
void qz(std::vector<double>& v) {
    if (!f32_mode()) return;
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("Tensor: extents must be positive");
        n *= d;
    }
    return n;
}

TensorPtr make_impl(std::vector<int> shape, bool requires_grad) {
    auto p = std::make_shared<TensorImpl>();
    p->live = std::make_shared<LiveCounter>();
    p->shape = std::move(shape);
    p->val.assign(static_cast<size_t>(shape_numel(p->shape)), 0.0);
    p->requires_grad = requires_grad;
    p->node_id = g_node_counter.fetch_add(1);
    return p;
}

// Result node whose requires_grad is inherited from its parents.
Tensor make_node(std::vector<int> shape, std::vector<Tensor> parents) {
    bool rg = false;
    for (const auto& t : parents) rg = rg || t.requires_grad();
    auto p = make_impl(std::move(shape), rg);
    p->parents.reserve(parents.size());
    for (const auto& t : parents) p->parents.push_back(t.impl());
    return Tensor(p);
}

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

int64_t live_tensor_count() { return g_live_tensors.load(); }

Precision precision() { return static_cast<Precision>(g_precision.load()); }
void set_precision(Precision p) { g_precision.store(static_cast<int>(p)); }

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
    return Tensor(make_impl(shape, requires_grad));
}

Tensor Tensor::full(const std::vector<int>& shape, double value, bool requires_grad) {
    auto p = make_impl(shape, requires_grad);
    std::fill(p->val.begin(), p->val.end(), value);
    qz(p->val);
    return Tensor(p);
}

Tensor Tensor::from(const std::vector<int>& shape, std::vector<double> data, bool requires_grad) {
    auto p = make_impl(shape, requires_grad);
    if (static_cast<int64_t>(data.size()) != p->size())
        throw std::invalid_argument("Tensor::from: data length does not match shape");
    p->val = std::move(data);
    qz(p->val);
    return Tensor(p);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

bool all_finite(const Tensor& t) {
    for (double x : t.data())
        if (!std::isfinite(x)) return false;
    return true;
}

void check_finite(const Tensor& t, const std::string& what) {
    if (!all_finite(t)) throw std::runtime_error("non-finite values in " + what);
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    if (!loss.requires_grad()) throw std::invalid_argument("backward: loss does not require grad");

    // Depth-first post-order; parents visited in insertion order so the
    // traversal (and therefore accumulation order) is deterministic.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    struct Frame {
        TensorImpl* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.impl().get(), 0});
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorImpl* parent = f.node->parents[f.next_parent++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = make_node(a.shape(), {a, b});
    auto* o = out.impl().get();
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < o->val.size(); ++i) o->val[i] = av[i] + bv[i];
    qz(o->val);
    if (out.requires_grad()) {
        auto ai = a.impl(); auto bi = b.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [ai, bi, oi]() {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
                qz(ai->grad);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
                qz(bi->grad);
            }
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = make_node(a.shape(), {a, b});
    auto* o = out.impl().get();
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < o->val.size(); ++i) o->val[i] = av[i] * bv[i];
    qz(o->val);
    if (out.requires_grad()) {
        auto ai = a.impl(); auto bi = b.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [ai, bi, oi]() {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * bi->val[i];
                qz(ai->grad);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i] * ai->val[i];
                qz(bi->grad);
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = make_node(a.shape(), {a});
    auto* o = out.impl().get();
    const auto& av = a.data();
    for (size_t i = 0; i < o->val.size(); ++i) o->val[i] = av[i] * c;
    qz(o->val);
    if (out.requires_grad()) {
        auto ai = a.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [ai, oi, c]() {
            ai->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
            qz(ai->grad);
        };
    }
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
    require_2d(a, "add_rowvec");
    const int m = a.rows(), n = a.cols();
    if (bias.size() != n) throw std::invalid_argument("add_rowvec: bias length must equal trailing extent");
    Tensor out = make_node(a.shape(), {a, bias});
    auto* o = out.impl().get();
    const auto& av = a.data();
    const auto& bv = bias.data();
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) {
            const size_t i = static_cast<size_t>(r) * n + c;
            o->val[i] = av[i] + bv[static_cast<size_t>(c)];
        }
    qz(o->val);
    if (out.requires_grad()) {
        auto ai = a.impl(); auto bi = bias.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [ai, bi, oi, m, n]() {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
                qz(ai->grad);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c)
                        bi->grad[static_cast<size_t>(c)] += oi->grad[static_cast<size_t>(r) * n + c];
                qz(bi->grad);
            }
        };
    }
    return out;
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw std::invalid_argument("mul_scalar: scale must be a single-element tensor");
    Tensor out = make_node(a.shape(), {a, s});
    auto* o = out.impl().get();
    const double sv = s.at(0);
    const auto& av = a.data();
    for (size_t i = 0; i < o->val.size(); ++i) o->val[i] = av[i] * sv;
    qz(o->val);
    if (out.requires_grad()) {
        auto ai = a.impl(); auto si = s.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [ai, si, oi]() {
            if (ai->requires_grad) {
                ai->ensure_grad();
                const double sv2 = si->val[0];
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * sv2;
                qz(ai->grad);
            }
            if (si->requires_grad) {
                si->ensure_grad();
                double acc = si->grad[0];
                for (size_t i = 0; i < oi->grad.size(); ++i) acc += oi->grad[i] * ai->val[i];
                si->grad[0] = acc;
                qz(si->grad);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2) throw std::invalid_argument("matmul: inner extents do not match");
    Tensor out = make_node({m, n}, {a, b});
    auto* o = out.impl().get();
    const double* av = a.data().data();
    const double* bv = b.data().data();
    double* ov = o->val.data();
    // i-k-j order keeps the inner loop contiguous in both B and C.
    for (int i = 0; i < m; ++i) {
        double* orow = ov + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = av[static_cast<size_t>(i) * k + kk];
            if (aik == 0.0) continue;
            const double* brow = bv + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    qz(o->val);
    if (out.requires_grad()) {
        auto ai = a.impl(); auto bi = b.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [ai, bi, oi, m, k, n]() {
            const double* g = oi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                double* ga = ai->grad.data();
                const double* bv2 = bi->val.data();
                // dA = dC . B^T  -> dot of contiguous rows
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const double* grow = g + static_cast<size_t>(i) * n;
                        const double* brow = bv2 + static_cast<size_t>(kk) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[static_cast<size_t>(i) * k + kk] += acc;
                    }
                qz(ai->grad);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                double* gb = bi->grad.data();
                const double* av2 = ai->val.data();
                // dB = A^T . dC  -> axpy over contiguous rows
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const double aik = av2[static_cast<size_t>(i) * k + kk];
                        if (aik == 0.0) continue;
                        const double* grow = g + static_cast<size_t>(i) * n;
                        double* brow = gb + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
                    }
                qz(bi->grad);
            }
        };
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int m = a.rows(), n = a.cols();
    Tensor out = make_node({n, m}, {a});
    auto* o = out.impl().get();
    const auto& av = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            o->val[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
    qz(o->val);
    if (out.requires_grad()) {
        auto ai = a.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [ai, oi, m, n]() {
            ai->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ai->grad[static_cast<size_t>(i) * n + j] += oi->grad[static_cast<size_t>(j) * m + i];
            qz(ai->grad);
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    if (axis == 0) return transpose(softmax(transpose(x), -1));
    if (axis != -1 && axis != x.ndim() - 1)
        throw std::invalid_argument("softmax: axis must be 0 or the last axis");
    check_finite(x, "softmax input");
    const int n = x.cols();
    const int m = static_cast<int>(x.size() / n);
    Tensor out = make_node(x.shape(), {x});
    auto* o = out.impl().get();
    const auto& xv = x.data();
    for (int r = 0; r < m; ++r) {
        const double* row = xv.data() + static_cast<size_t>(r) * n;
        double* orow = o->val.data() + static_cast<size_t>(r) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= denom;
    }
    qz(o->val);
    if (out.requires_grad()) {
        auto xi = x.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [xi, oi, m, n]() {
            xi->ensure_grad();
            for (int r = 0; r < m; ++r) {
                const double* y = oi->val.data() + static_cast<size_t>(r) * n;
                const double* gy = oi->grad.data() + static_cast<size_t>(r) * n;
                double* gx = xi->grad.data() + static_cast<size_t>(r) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
                for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
            qz(xi->grad);
        };
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "layer_norm");
    const int m = x.rows(), n = x.cols();
    if (gain.size() != n || bias.size() != n)
        throw std::invalid_argument("layer_norm: gain/bias length must equal row width");
    Tensor out = make_node(x.shape(), {x, gain, bias});
    auto* o = out.impl().get();
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    // Save inv-std and normalized rows for backward.
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * n);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    for (int r = 0; r < m; ++r) {
        const double* row = xv.data() + static_cast<size_t>(r) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (row[j] - mu) * is;
            (*xhat)[static_cast<size_t>(r) * n + j] = xh;
            o->val[static_cast<size_t>(r) * n + j] = gv[static_cast<size_t>(j)] * xh + bv[static_cast<size_t>(j)];
        }
    }
    qz(o->val);
    if (out.requires_grad()) {
        auto xi = x.impl(); auto gi = gain.impl(); auto bi = bias.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [xi, gi, bi, oi, xhat, inv_std, m, n]() {
            for (int r = 0; r < m; ++r) {
                const double* gy = oi->grad.data() + static_cast<size_t>(r) * n;
                const double* xh = xhat->data() + static_cast<size_t>(r) * n;
                if (gi->requires_grad) {
                    gi->ensure_grad();
                    for (int j = 0; j < n; ++j) gi->grad[static_cast<size_t>(j)] += gy[j] * xh[j];
                }
                if (bi->requires_grad) {
                    bi->ensure_grad();
                    for (int j = 0; j < n; ++j) bi->grad[static_cast<size_t>(j)] += gy[j];
                }
                if (xi->requires_grad) {
                    xi->ensure_grad();
                    double* gx = xi->grad.data() + static_cast<size_t>(r) * n;
                    const double is = (*inv_std)[static_cast<size_t>(r)];
                    // dxhat = gy * gain; dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double d = gy[j] * gi->val[static_cast<size_t>(j)];
                        mean_d += d;
                        mean_dx += d * xh[j];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    for (int j = 0; j < n; ++j) {
                        const double d = gy[j] * gi->val[static_cast<size_t>(j)];
                        gx[j] += is * (d - mean_d - xh[j] * mean_dx);
                    }
                }
            }
            if (gi->requires_grad) qz(gi->grad);
            if (bi->requires_grad) qz(bi->grad);
            if (xi->requires_grad) qz(xi->grad);
        };
    }
    return out;
}

namespace {

// Shared scaffolding for elementwise unary primitives.
// dfn receives (x, y) and returns dy/dx.
Tensor unary_op(const Tensor& x, double (*fn)(double), double (*dfn)(double, double)) {
    Tensor out = make_node(x.shape(), {x});
    auto* o = out.impl().get();
    const auto& xv = x.data();
    for (size_t i = 0; i < o->val.size(); ++i) o->val[i] = fn(xv[i]);
    qz(o->val);
    if (out.requires_grad()) {
        auto xi = x.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [xi, oi, dfn]() {
            xi->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[i] += oi->grad[i] * dfn(xi->val[i], oi->val[i]);
            qz(xi->grad);
        };
    }
    return out;
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor silu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v * sigmoid_scalar(v); },
        [](double v, double) {
            const double s = sigmoid_scalar(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, [](double v) { return sigmoid_scalar(v); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    Tensor out = make_node({1}, {x});
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    out.impl()->val[0] = acc;
    qz(out.impl()->val);
    if (out.requires_grad()) {
        auto xi = x.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [xi, oi]() {
            xi->ensure_grad();
            const double g = oi->grad[0];
            for (double& v : xi->grad) v += g;
            qz(xi->grad);
        };
    }
    return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int n = parts[0].cols();
    int m = 0;
    for (const auto& t : parts) {
        require_2d(t, "concat_rows");
        if (t.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
        m += t.rows();
    }
    Tensor out = make_node({m, n}, parts);
    auto* o = out.impl().get();
    size_t off = 0;
    for (const auto& t : parts) {
        const auto& v = t.data();
        std::copy(v.begin(), v.end(), o->val.begin() + static_cast<long>(off));
        off += v.size();
    }
    qz(o->val);
    if (out.requires_grad()) {
        TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [oi]() {
            size_t pos = 0;
            for (auto& p : oi->parents) {
                const size_t len = p->val.size();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < len; ++i) p->grad[i] += oi->grad[pos + i];
                    qz(p->grad);
                }
                pos += len;
            }
        };
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
    require_2d(x, "slice_rows");
    if (r0 < 0 || r1 > x.rows() || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    const int n = x.cols();
    Tensor out = make_node({r1 - r0, n}, {x});
    auto* o = out.impl().get();
    std::copy(x.data().begin() + static_cast<long>(r0) * n, x.data().begin() + static_cast<long>(r1) * n,
              o->val.begin());
    qz(o->val);
    if (out.requires_grad()) {
        auto xi = x.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [xi, oi, r0, n]() {
            xi->ensure_grad();
            const size_t base = static_cast<size_t>(r0) * n;
            for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[base + i] += oi->grad[i];
            qz(xi->grad);
        };
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int m = parts[0].rows();
    int n = 0;
    for (const auto& t : parts) {
        require_2d(t, "concat_cols");
        if (t.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
        n += t.cols();
    }
    Tensor out = make_node({m, n}, parts);
    auto* o = out.impl().get();
    int coff = 0;
    for (const auto& t : parts) {
        const int tc = t.cols();
        for (int r = 0; r < m; ++r)
            std::copy(t.data().begin() + static_cast<long>(r) * tc, t.data().begin() + static_cast<long>(r + 1) * tc,
                      o->val.begin() + static_cast<long>(r) * n + coff);
        coff += tc;
    }
    qz(o->val);
    if (out.requires_grad()) {
        TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [oi, m, n]() {
            int coff2 = 0;
            for (auto& p : oi->parents) {
                const int tc = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < tc; ++c)
                            p->grad[static_cast<size_t>(r) * tc + c] +=
                                oi->grad[static_cast<size_t>(r) * n + coff2 + c];
                    qz(p->grad);
                }
                coff2 += tc;
            }
        };
    }
    return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    require_2d(x, "slice_cols");
    if (c0 < 0 || c1 > x.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    const int m = x.rows(), n = x.cols(), w = c1 - c0;
    Tensor out = make_node({m, w}, {x});
    auto* o = out.impl().get();
    for (int r = 0; r < m; ++r)
        std::copy(x.data().begin() + static_cast<long>(r) * n + c0, x.data().begin() + static_cast<long>(r) * n + c1,
                  o->val.begin() + static_cast<long>(r) * w);
    qz(o->val);
    if (out.requires_grad()) {
        auto xi = x.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [xi, oi, m, n, c0, w]() {
            xi->ensure_grad();
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < w; ++c)
                    xi->grad[static_cast<size_t>(r) * n + c0 + c] += oi->grad[static_cast<size_t>(r) * w + c];
            qz(xi->grad);
        };
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    require_2d(x, "gather_rows");
    if (idx.empty()) throw std::invalid_argument("gather_rows: empty index list");
    const int m = x.rows(), n = x.cols();
    for (int i : idx)
        if (i < 0 || i >= m) throw std::invalid_argument("gather_rows: index out of range");
    Tensor out = make_node({static_cast<int>(idx.size()), n}, {x});
    auto* o = out.impl().get();
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(x.data().begin() + static_cast<long>(idx[r]) * n,
                  x.data().begin() + static_cast<long>(idx[r] + 1) * n, o->val.begin() + static_cast<long>(r) * n);
    qz(o->val);
    if (out.requires_grad()) {
        auto xi = x.impl(); TensorImpl* oi = out.impl().get();
        auto indices = idx;
        out.impl()->backward_fn = [xi, oi, indices, n]() {
            xi->ensure_grad();
            for (size_t r = 0; r < indices.size(); ++r) {
                double* dst = xi->grad.data() + static_cast<size_t>(indices[r]) * n;
                const double* src = oi->grad.data() + r * static_cast<size_t>(n);
                for (int c = 0; c < n; ++c) dst[c] += src[c];
            }
            qz(xi->grad);
        };
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) { return gather_rows(table, ids); }

Tensor l2_normalize(const Tensor& x) {
    require_2d(x, "l2_normalize");
    const int m = x.rows(), n = x.cols();
    Tensor out = make_node(x.shape(), {x});
    auto* o = out.impl().get();
    auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    for (int r = 0; r < m; ++r) {
        const double* row = x.data().data() + static_cast<size_t>(r) * n;
        double sq = 0.0;
        for (int j = 0; j < n; ++j) sq += row[j] * row[j];
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0) || !std::isfinite(norm)) throw std::runtime_error("l2_normalize: zero or non-finite row");
        (*norms)[static_cast<size_t>(r)] = norm;
        for (int j = 0; j < n; ++j) o->val[static_cast<size_t>(r) * n + j] = row[j] / norm;
    }
    qz(o->val);
    if (out.requires_grad()) {
        auto xi = x.impl(); TensorImpl* oi = out.impl().get();
        out.impl()->backward_fn = [xi, oi, norms, m, n]() {
            xi->ensure_grad();
            for (int r = 0; r < m; ++r) {
                const double* y = oi->val.data() + static_cast<size_t>(r) * n;
                const double* gy = oi->grad.data() + static_cast<size_t>(r) * n;
                double* gx = xi->grad.data() + static_cast<size_t>(r) * n;
                const double norm = (*norms)[static_cast<size_t>(r)];
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
                for (int j = 0; j < n; ++j) gx[j] += (gy[j] - y[j] * dot) / norm;
            }
            qz(xi->grad);
        };
    }
    return out;
}

Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<uint8_t>& valid) {
    require_2d(logits, "cross_entropy_from_logits");
    const int m = logits.rows(), n = logits.cols();
    if (static_cast<int>(targets.size()) != m)
        throw std::invalid_argument("cross_entropy_from_logits: one target per row required");
    if (!valid.empty() && static_cast<int>(valid.size()) != m)
        throw std::invalid_argument("cross_entropy_from_logits: valid mask length mismatch");
    check_finite(logits, "cross_entropy_from_logits input");

    int count = 0;
    for (int r = 0; r < m; ++r)
        if (valid.empty() || valid[static_cast<size_t>(r)]) {
            if (targets[static_cast<size_t>(r)] < 0 || targets[static_cast<size_t>(r)] >= n)
                throw std::invalid_argument("cross_entropy_from_logits: target id out of range");
            ++count;
        }
    if (count == 0) throw std::invalid_argument("cross_entropy_from_logits: no valid target rows");

    Tensor out = make_node({1}, {logits});
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * n);
    double loss = 0.0;
    for (int r = 0; r < m; ++r) {
        if (!valid.empty() && !valid[static_cast<size_t>(r)]) continue;
        const double* row = logits.data().data() + static_cast<size_t>(r) * n;
        double* prow = probs->data() + static_cast<size_t>(r) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (int j = 0; j < n; ++j) prow[j] /= denom;
        loss += std::log(denom) + mx - row[targets[static_cast<size_t>(r)]];
    }
    out.impl()->val[0] = loss / count;
    qz(out.impl()->val);
    if (out.requires_grad()) {
        auto li = logits.impl(); TensorImpl* oi = out.impl().get();
        auto tgt = targets;
        auto vmask = valid;
        out.impl()->backward_fn = [li, oi, probs, tgt, vmask, m, n, count]() {
            li->ensure_grad();
            const double g = oi->grad[0] / count;
            for (int r = 0; r < m; ++r) {
                if (!vmask.empty() && !vmask[static_cast<size_t>(r)]) continue;
                const double* prow = probs->data() + static_cast<size_t>(r) * n;
                double* grow = li->grad.data() + static_cast<size_t>(r) * n;
                for (int j = 0; j < n; ++j) grow[j] += g * prow[j];
                grow[tgt[static_cast<size_t>(r)]] -= g;
            }
            qz(li->grad);
        };
    }
    return out;
}

}  // namespace cacophony
