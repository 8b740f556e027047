#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vsr/errors.hpp"
#include "vsr/rng.hpp"

namespace vsr {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // persistent accumulator, sized iff requires_grad
    bool requires_grad = false;
    bool frozen = false;
};

template <typename T>
class Tape;

// Dense row-major tensor with shared-handle semantics. Arithmetic is
// recorded on the thread's active Tape (if any) for reverse-mode
// differentiation; without a tape, ops are plain forward math.
template <typename T>
class TensorT {
public:
    TensorT() : s_(nullptr) {}

    static TensorT zeros(Shape shape) {
        TensorT t;
        t.s_ = std::make_shared<TensorStorage<T>>();
        t.s_->values.assign(shape_numel(shape), T(0));
        t.s_->shape = std::move(shape);
        return t;
    }

    static TensorT full(Shape shape, T v) {
        TensorT t = zeros(std::move(shape));
        std::fill(t.s_->values.begin(), t.s_->values.end(), v);
        return t;
    }

    static TensorT from(Shape shape, std::vector<T> vals) {
        if (shape_numel(shape) != vals.size())
            throw DimensionError("tensor init: shape " + shape_str(shape) + " wants " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(vals.size()));
        TensorT t;
        t.s_ = std::make_shared<TensorStorage<T>>();
        t.s_->shape = std::move(shape);
        t.s_->values = std::move(vals);
        return t;
    }

    static TensorT scalar(T v) { return from({1}, {v}); }

    // Normal(0, std) fill from a counter-based stream.
    static TensorT randn(Shape shape, uint64_t seed, T stddev = T(1)) {
        TensorT t = zeros(std::move(shape));
        for (size_t i = 0; i < t.numel(); ++i)
            t.s_->values[i] = static_cast<T>(normal_at(seed, i)) * stddev;
        return t;
    }

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    size_t numel() const { return s_->values.size(); }
    size_t ndim() const { return s_->shape.size(); }
    size_t dim(size_t i) const { return s_->shape[i]; }

    std::vector<T>& values() { return s_->values; }
    const std::vector<T>& values() const { return s_->values; }
    T* data() { return s_->values.data(); }
    const T* data() const { return s_->values.data(); }

    T item() const {
        if (numel() != 1) throw UsageError("item(): tensor has " + std::to_string(numel()) + " elements");
        return s_->values[0];
    }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool rg) {
        s_->requires_grad = rg;
        if (rg)
            s_->grad.assign(s_->values.size(), T(0));
        else
            s_->grad.clear();
    }

    bool frozen() const { return s_->frozen; }
    void set_frozen(bool f) {
        s_->frozen = f;
        if (f) set_requires_grad(false);
    }

    std::vector<T>& grad() {
        if (!s_->requires_grad) throw UsageError("grad(): tensor does not require grad");
        return s_->grad;
    }
    const std::vector<T>& grad() const {
        if (!s_->requires_grad) throw UsageError("grad(): tensor does not require grad");
        return s_->grad;
    }
    void zero_grad() {
        if (s_->requires_grad) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    TensorT clone() const {
        TensorT t;
        t.s_ = std::make_shared<TensorStorage<T>>();
        t.s_->shape = s_->shape;
        t.s_->values = s_->values;
        return t;
    }

    bool same_storage(const TensorT& o) const { return s_.get() == o.s_.get(); }
    TensorStorage<T>* storage() const { return s_.get(); }

private:
    std::shared_ptr<TensorStorage<T>> s_;
    friend class Tape<T>;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Reverse-mode tape. Ops executed while a tape is active append a node whose
// backward closure scatters the output adjoint into the input adjoints.
// backward() walks the nodes once, in reverse execution order; a value read
// by k later ops has received all k contributions by the time its own node
// runs. Adjoints live on the tape, so concurrent tapes over shared read-only
// parameters are safe; flush_leaf_grads() folds leaf adjoints into the
// persistent .grad accumulators.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    struct Scope {
        explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
        ~Scope() { active_ = prev_; }

    private:
        Tape* prev_;
    };

    bool tracked(const TensorT<T>& t) const { return slots_.count(t.storage()) != 0; }

    // Registers t as a differentiable input/output of a recorded op.
    size_t track(const TensorT<T>& t) {
        auto it = slots_.find(t.storage());
        if (it != slots_.end()) return it->second;
        const size_t slot = adjoints_.size();
        slots_.emplace(t.storage(), slot);
        adjoints_.emplace_back();  // allocated lazily at backward time
        held_.push_back(t);
        return slot;
    }

    void record(std::function<void(Tape&)> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    // Adjoint buffer for a tracked tensor, allocated on first touch.
    std::vector<T>& adjoint_of(const TensorT<T>& t) {
        auto it = slots_.find(t.storage());
        if (it == slots_.end()) throw UsageError("adjoint_of(): tensor is not tracked by this tape");
        std::vector<T>& a = adjoints_[it->second];
        if (a.empty()) a.assign(t.numel(), T(0));
        return a;
    }

    // Null if the tensor is untracked or its adjoint was never touched.
    const std::vector<T>* adjoint(const TensorT<T>& t) const {
        auto it = slots_.find(t.storage());
        if (it == slots_.end()) return nullptr;
        const std::vector<T>& a = adjoints_[it->second];
        return a.empty() ? nullptr : &a;
    }

    // Populates adjoints for everything reachable from loss. When
    // accumulate_leaf_grads is set, leaf adjoints are added into the
    // tensors' .grad accumulators before returning.
    void backward(const TensorT<T>& loss, bool accumulate_leaf_grads = true) {
        if (loss.numel() != 1) throw UsageError("backward(): loss must be scalar, got shape " + shape_str(loss.shape()));
        if (!tracked(loss)) throw UsageError("backward(): loss was not produced under this tape");
        adjoint_of(loss)[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
        if (accumulate_leaf_grads) flush_leaf_grads();
    }

    // Adds every tracked requires_grad tensor's adjoint into its .grad.
    void flush_leaf_grads() {
        for (auto& t : held_) {
            if (!t.requires_grad()) continue;
            const std::vector<T>* a = adjoint(t);
            if (!a) continue;
            std::vector<T>& g = t.grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += (*a)[i];
        }
    }

    size_t node_count() const { return nodes_.size(); }

private:
    static thread_local Tape* active_;
    std::vector<std::function<void(Tape&)>> nodes_;
    std::unordered_map<const TensorStorage<T>*, size_t> slots_;
    std::vector<std::vector<T>> adjoints_;
    std::vector<TensorT<T>> held_;  // keeps storages alive for backward
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

namespace detail {

// An op's output joins the tape when any differentiable input is either a
// requires_grad leaf or was itself produced on the tape.
template <typename T>
bool needs_tape(std::initializer_list<const TensorT<T>*> inputs) {
    Tape<T>* tape = Tape<T>::active();
    if (!tape) return false;
    for (const TensorT<T>* t : inputs)
        if (t->requires_grad() || tape->tracked(*t)) return true;
    return false;
}

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

// C[m,n] = A[m,k] * B[k,n]. The k loop runs low-to-high for every output
// element, so results are reduction-order deterministic.
template <typename T>
void matmul_raw(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    std::fill(c, c + m * n, T(0));
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] = A[m,k] * B^T where B is [n,k].
template <typename T>
void matmul_nt_raw(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] = acc;
        }
    }
}

// C[m,n] = A^T * B where A is [k,m], B is [k,n].
template <typename T>
void matmul_tn_raw(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    std::fill(c, c + m * n, T(0));
    for (size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + i * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("matmul: expects 2-d tensors, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> c = TensorT<T>::zeros({m, n});
    matmul_raw(a.data(), b.data(), c.data(), m, k, n);

    if (detail::needs_tape<T>({&a, &b})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(a);
        tape->track(b);
        tape->track(c);
        tape->record([a, b, c, m, k, n](Tape<T>& t) {
            const std::vector<T>* dc = t.adjoint(c);
            if (!dc) return;
            // dA += dC * B^T, dB += A^T * dC
            std::vector<T> tmp(m * k);
            matmul_nt_raw(dc->data(), b.data(), tmp.data(), m, n, k);
            std::vector<T>& da = t.adjoint_of(a);
            for (size_t i = 0; i < tmp.size(); ++i) da[i] += tmp[i];
            tmp.assign(k * n, T(0));
            matmul_tn_raw(a.data(), dc->data(), tmp.data(), k, m, n);
            std::vector<T>& db = t.adjoint_of(b);
            for (size_t i = 0; i < tmp.size(); ++i) db[i] += tmp[i];
        });
    }
    return c;
}

// ---------------------------------------------------------------------------
// Elementwise ops (equal shapes; scalar broadcast only)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
TensorT<T> binary_ew(const char* name, const TensorT<T>& a, const TensorT<T>& b, Fwd fwd, Bwd bwd) {
    check_same_shape(name, a, b);
    TensorT<T> c = TensorT<T>::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) c.data()[i] = fwd(a.data()[i], b.data()[i]);
    if (needs_tape<T>({&a, &b})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(a);
        tape->track(b);
        tape->track(c);
        tape->record([a, b, c, bwd, n](Tape<T>& t) {
            const std::vector<T>* dc = t.adjoint(c);
            if (!dc) return;
            std::vector<T>& da = t.adjoint_of(a);
            std::vector<T>& db = t.adjoint_of(b);
            for (size_t i = 0; i < n; ++i) bwd(a.data()[i], b.data()[i], (*dc)[i], da[i], db[i]);
        });
    }
    return c;
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_ew<T>(
        "add", a, b, [](T x, T y) { return x + y; },
        [](T, T, T d, T& da, T& db) {
            da += d;
            db += d;
        });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_ew<T>(
        "sub", a, b, [](T x, T y) { return x - y; },
        [](T, T, T d, T& da, T& db) {
            da += d;
            db -= d;
        });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_ew<T>(
        "mul", a, b, [](T x, T y) { return x * y; },
        [](T x, T y, T d, T& da, T& db) {
            da += d * y;
            db += d * x;
        });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> c = TensorT<T>::zeros(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) c.data()[i] = a.data()[i] * s;
    if (detail::needs_tape<T>({&a})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(a);
        tape->track(c);
        tape->record([a, c, s](Tape<T>& t) {
            const std::vector<T>* dc = t.adjoint(c);
            if (!dc) return;
            std::vector<T>& da = t.adjoint_of(a);
            for (size_t i = 0; i < da.size(); ++i) da[i] += (*dc)[i] * s;
        });
    }
    return c;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, T s) {
    TensorT<T> c = TensorT<T>::zeros(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) c.data()[i] = a.data()[i] + s;
    if (detail::needs_tape<T>({&a})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(a);
        tape->track(c);
        tape->record([a, c](Tape<T>& t) {
            const std::vector<T>* dc = t.adjoint(c);
            if (!dc) return;
            std::vector<T>& da = t.adjoint_of(a);
            for (size_t i = 0; i < da.size(); ++i) da[i] += (*dc)[i];
        });
    }
    return c;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, T s) {
    return add(a, -s);
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

// tanh-approximation GELU.
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
    constexpr T kSqrt2OverPi = T(0.7978845608028653558798921198687);
    constexpr T kCubic = T(0.044715);
    TensorT<T> y = TensorT<T>::zeros(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
        const T v = x.data()[i];
        const T u = kSqrt2OverPi * (v + kCubic * v * v * v);
        y.data()[i] = T(0.5) * v * (T(1) + std::tanh(u));
    }
    if (detail::needs_tape<T>({&x})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(x);
        tape->track(y);
        tape->record([x, y](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& dx = t.adjoint_of(x);
            for (size_t i = 0; i < dx.size(); ++i) {
                const T v = x.data()[i];
                const T u = kSqrt2OverPi * (v + kCubic * v * v * v);
                const T th = std::tanh(u);
                const T sech2 = T(1) - th * th;
                const T du = kSqrt2OverPi * (T(1) + T(3) * kCubic * v * v);
                dx[i] += (*dy)[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * sech2 * du);
            }
        });
    }
    return y;
}

// Per-row normalization over the last axis, then affine (gamma, beta).
template <typename T>
TensorT<T> layernorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta, T eps) {
    if (x.ndim() < 1) throw DimensionError("layernorm: input must have at least one axis");
    const size_t d = x.dim(x.ndim() - 1);
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("layernorm: affine params must have length " + std::to_string(d));
    if (!(eps > T(0))) throw RangeError("layernorm: eps must be positive");
    const size_t rows = x.numel() / d;
    TensorT<T> y = TensorT<T>::zeros(x.shape());
    // Saved for backward: per-row inverse sigma and normalized values.
    auto inv_sigma = std::make_shared<std::vector<T>>(rows);
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * d;
        T mean = T(0);
        for (size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= T(d);
        T var = T(0);
        for (size_t j = 0; j < d; ++j) {
            const T c = xr[j] - mean;
            var += c * c;
        }
        var /= T(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_sigma)[r] = is;
        T* yr = y.data() + r * d;
        for (size_t j = 0; j < d; ++j) {
            const T xh = (xr[j] - mean) * is;
            (*xhat)[r * d + j] = xh;
            yr[j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    if (detail::needs_tape<T>({&x, &gamma, &beta})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(x);
        tape->track(gamma);
        tape->track(beta);
        tape->track(y);
        tape->record([x, gamma, beta, y, inv_sigma, xhat, rows, d](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& dx = t.adjoint_of(x);
            std::vector<T>& dg = t.adjoint_of(gamma);
            std::vector<T>& db = t.adjoint_of(beta);
            for (size_t r = 0; r < rows; ++r) {
                const T is = (*inv_sigma)[r];
                const T* xh = xhat->data() + r * d;
                const T* dyr = dy->data() + r * d;
                T mean_dxh = T(0), mean_dxh_xh = T(0);
                for (size_t j = 0; j < d; ++j) {
                    const T dxh = dyr[j] * gamma.data()[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[j];
                }
                mean_dxh /= T(d);
                mean_dxh_xh /= T(d);
                for (size_t j = 0; j < d; ++j) {
                    const T dxh = dyr[j] * gamma.data()[j];
                    dx[r * d + j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    dg[j] += dyr[j] * xh[j];
                    db[j] += dyr[j];
                }
            }
        });
    }
    return y;
}

// Row softmax over the last axis with max-subtraction stabilization.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    if (x.ndim() < 1) throw DimensionError("softmax_rows: input must have at least one axis");
    const size_t d = x.dim(x.ndim() - 1);
    const size_t rows = x.numel() / d;
    TensorT<T> y = TensorT<T>::zeros(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * d;
        T* yr = y.data() + r * d;
        T mx = xr[0];
        for (size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (size_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (size_t j = 0; j < d; ++j) yr[j] *= inv;
    }
    if (detail::needs_tape<T>({&x})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(x);
        tape->track(y);
        tape->record([x, y, rows, d](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& dx = t.adjoint_of(x);
            for (size_t r = 0; r < rows; ++r) {
                const T* yr = y.data() + r * d;
                const T* dyr = dy->data() + r * d;
                T dot = T(0);
                for (size_t j = 0; j < d; ++j) dot += dyr[j] * yr[j];
                for (size_t j = 0; j < d; ++j) dx[r * d + j] += yr[j] * (dyr[j] - dot);
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Layout ops: reshape / permute / concat / slice / repeat_rows
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    TensorT<T> y = TensorT<T>::from(std::move(new_shape), x.values());
    if (detail::needs_tape<T>({&x})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(x);
        tape->track(y);
        tape->record([x, y](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& dx = t.adjoint_of(x);
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += (*dy)[i];
        });
    }
    return y;
}

namespace detail {

inline std::vector<size_t> row_major_strides(const Shape& s) {
    std::vector<size_t> st(s.size());
    size_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

}  // namespace detail

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<size_t>& perm) {
    const size_t nd = x.ndim();
    if (perm.size() != nd) throw DimensionError("permute: permutation rank != tensor rank");
    std::vector<bool> seen(nd, false);
    Shape out_shape(nd);
    for (size_t i = 0; i < nd; ++i) {
        if (perm[i] >= nd || seen[perm[i]]) throw DimensionError("permute: invalid permutation");
        seen[perm[i]] = true;
        out_shape[i] = x.dim(perm[i]);
    }
    // index_map[j] = flat source index feeding output element j
    auto index_map = std::make_shared<std::vector<size_t>>(x.numel());
    const auto in_st = detail::row_major_strides(x.shape());
    const auto out_st = detail::row_major_strides(out_shape);
    std::vector<size_t> idx(nd, 0);
    for (size_t j = 0; j < x.numel(); ++j) {
        size_t rem = j, src = 0;
        for (size_t a = 0; a < nd; ++a) {
            const size_t coord = rem / out_st[a];
            rem %= out_st[a];
            src += coord * in_st[perm[a]];
        }
        (*index_map)[j] = src;
    }
    TensorT<T> y = TensorT<T>::zeros(out_shape);
    for (size_t j = 0; j < y.numel(); ++j) y.data()[j] = x.data()[(*index_map)[j]];
    if (detail::needs_tape<T>({&x})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(x);
        tape->track(y);
        tape->record([x, y, index_map](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& dx = t.adjoint_of(x);
            for (size_t j = 0; j < dy->size(); ++j) dx[(*index_map)[j]] += (*dy)[j];
        });
    }
    return y;
}

template <typename T>
TensorT<T> concat(const TensorT<T>& a, const TensorT<T>& b, size_t axis) {
    if (a.ndim() != b.ndim()) throw DimensionError("concat: rank mismatch");
    const size_t nd = a.ndim();
    if (axis >= nd) throw DimensionError("concat: axis " + std::to_string(axis) + " out of range");
    for (size_t i = 0; i < nd; ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw DimensionError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                 " differ off-axis");
    Shape out_shape = a.shape();
    out_shape[axis] += b.dim(axis);
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (size_t i = axis + 1; i < nd; ++i) inner *= a.dim(i);
    const size_t wa = a.dim(axis) * inner, wb = b.dim(axis) * inner;
    TensorT<T> y = TensorT<T>::zeros(out_shape);
    for (size_t o = 0; o < outer; ++o) {
        std::copy(a.data() + o * wa, a.data() + (o + 1) * wa, y.data() + o * (wa + wb));
        std::copy(b.data() + o * wb, b.data() + (o + 1) * wb, y.data() + o * (wa + wb) + wa);
    }
    if (detail::needs_tape<T>({&a, &b})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(a);
        tape->track(b);
        tape->track(y);
        tape->record([a, b, y, outer, wa, wb](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& da = t.adjoint_of(a);
            std::vector<T>& db = t.adjoint_of(b);
            for (size_t o = 0; o < outer; ++o) {
                for (size_t i = 0; i < wa; ++i) da[o * wa + i] += (*dy)[o * (wa + wb) + i];
                for (size_t i = 0; i < wb; ++i) db[o * wb + i] += (*dy)[o * (wa + wb) + wa + i];
            }
        });
    }
    return y;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, size_t axis, size_t start, size_t len) {
    const size_t nd = x.ndim();
    if (axis >= nd) throw DimensionError("slice: axis " + std::to_string(axis) + " out of range");
    if (start + len > x.dim(axis) || len == 0)
        throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") exceeds axis size " + std::to_string(x.dim(axis)));
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (size_t i = axis + 1; i < nd; ++i) inner *= x.dim(i);
    const size_t wx = x.dim(axis) * inner, wy = len * inner, off = start * inner;
    TensorT<T> y = TensorT<T>::zeros(out_shape);
    for (size_t o = 0; o < outer; ++o)
        std::copy(x.data() + o * wx + off, x.data() + o * wx + off + wy, y.data() + o * wy);
    if (detail::needs_tape<T>({&x})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(x);
        tape->track(y);
        tape->record([x, y, outer, wx, wy, off](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& dx = t.adjoint_of(x);
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < wy; ++i) dx[o * wx + off + i] += (*dy)[o * wy + i];
        });
    }
    return y;
}

// [d] row vector tiled to [n, d]; gradient is the column sum.
template <typename T>
TensorT<T> repeat_rows(const TensorT<T>& row, size_t n) {
    if (row.ndim() != 1) throw DimensionError("repeat_rows: expects a 1-d tensor, got " + shape_str(row.shape()));
    const size_t d = row.dim(0);
    TensorT<T> y = TensorT<T>::zeros({n, d});
    for (size_t r = 0; r < n; ++r) std::copy(row.data(), row.data() + d, y.data() + r * d);
    if (detail::needs_tape<T>({&row})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(row);
        tape->track(y);
        tape->record([row, y, n, d](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& dr = t.adjoint_of(row);
            for (size_t r = 0; r < n; ++r)
                for (size_t j = 0; j < d; ++j) dr[j] += (*dy)[r * d + j];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& x) {
    T acc = T(0);
    for (size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];  // fixed left-to-right order
    TensorT<T> y = TensorT<T>::scalar(acc);
    if (detail::needs_tape<T>({&x})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(x);
        tape->track(y);
        tape->record([x, y](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& dx = t.adjoint_of(x);
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += (*dy)[0];
        });
    }
    return y;
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& x) {
    return scale(reduce_sum(x), T(1) / T(x.numel()));
}

template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("mse", a, b);
    const size_t n = a.numel();
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        const T d = a.data()[i] - b.data()[i];
        acc += d * d;
    }
    TensorT<T> y = TensorT<T>::scalar(acc / T(n));
    if (detail::needs_tape<T>({&a, &b})) {
        Tape<T>* tape = Tape<T>::active();
        tape->track(a);
        tape->track(b);
        tape->track(y);
        tape->record([a, b, y, n](Tape<T>& t) {
            const std::vector<T>* dy = t.adjoint(y);
            if (!dy) return;
            std::vector<T>& da = t.adjoint_of(a);
            std::vector<T>& db = t.adjoint_of(b);
            const T c = T(2) / T(n) * (*dy)[0];
            for (size_t i = 0; i < n; ++i) {
                const T d = a.data()[i] - b.data()[i];
                da[i] += c * d;
                db[i] -= c * d;
            }
        });
    }
    return y;
}

template <typename T>
bool all_finite(const TensorT<T>& x) {
    for (size_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(x.data()[i])) return false;
    return true;
}

}  // namespace vsr
