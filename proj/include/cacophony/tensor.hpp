#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
// Storage is always float64; in f32 precision mode every primitive quantizes
// its outputs (and gradient accumulations) to float32 values, so training
// runs behave like a 32-bit pipeline while gradient checking runs in full
// float64. Accumulation order is sequential and deterministic.

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cacophony {

enum class Precision { f64, f32 };

Precision precision();
void set_precision(Precision p);

// RAII scope guard used by tests that need to flip the mode temporarily.
class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : prev_(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(prev_); }

private:
    Precision prev_;
};

struct TensorImpl;
using TensorPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    uint64_t node_id = 0;  // creation order; keeps backward traversal deterministic
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;
    std::shared_ptr<void> live;  // leak canary

    int64_t size() const { return static_cast<int64_t>(val.size()); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorPtr p) : p_(std::move(p)) {}

    static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<int>& shape, double value, bool requires_grad = false);
    static Tensor from(const std::vector<int>& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return p_ != nullptr; }
    const std::vector<int>& shape() const { return p_->shape; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }
    int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
    // 2-D accessors; most model tensors are matrices.
    int rows() const { return p_->shape.at(0); }
    int cols() const { return ndim() >= 2 ? p_->shape.at(1) : 1; }
    int64_t size() const { return p_->size(); }

    std::vector<double>& data() { return p_->val; }
    const std::vector<double>& data() const { return p_->val; }
    std::vector<double>& grad() {
        p_->ensure_grad();
        return p_->grad;
    }
    const std::vector<double>& grad() const { return p_->grad; }
    bool has_grad() const { return !p_->grad.empty(); }
    void zero_grad() { p_->grad.assign(p_->val.size(), 0.0); }

    bool requires_grad() const { return p_->requires_grad; }
    double item() const {
        if (size() != 1) throw std::invalid_argument("Tensor::item: tensor is not a scalar");
        return p_->val[0];
    }
    double at(int64_t i) const { return p_->val[static_cast<size_t>(i)]; }
    double at(int r, int c) const { return p_->val[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)]; }

    TensorPtr impl() const { return p_; }

private:
    TensorPtr p_;
};

// Runs reverse-mode accumulation from a scalar loss. Visits each reachable
// node exactly once in reverse topological order.
void backward(const Tensor& loss);

// Live TensorImpl count; graphs must free once their handles drop.
int64_t live_tensor_count();

bool all_finite(const Tensor& t);
void check_finite(const Tensor& t, const std::string& what);

// ---------------------------------------------------------------------------
// Primitives. Each builds a graph node with a backward rule.
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// Broadcast add of a row vector [n] or [1 x n] over the trailing axis of [m x n].
Tensor add_rowvec(const Tensor& a, const Tensor& bias);
// Elementwise multiply by a single-element tensor (used by the temperature).
Tensor mul_scalar(const Tensor& a, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// axis = -1 (rows) or 0 (columns) of a 2-D tensor. Max-subtracted for stability.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int c0, int c1);
// Row gather; indices may repeat, backward accumulates into the source rows.
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// Row-wise l2 normalization; a zero row is a numeric error.
Tensor l2_normalize(const Tensor& x);

// Mean of -log softmax(logits)[target] over rows where valid (all rows when
// valid is empty). Fused stable forward and (p - onehot)/count backward.
Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<uint8_t>& valid = {});

}  // namespace cacophony
