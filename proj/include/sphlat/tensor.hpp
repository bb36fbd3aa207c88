#pragma once

// Dense-tensor reverse-mode autodiff on an explicit tape. 64-bit floats
// throughout; single-threaded per tape. Gradients accumulate (+=) into
// Parameter buffers and persist until zero_grad.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sphlat {

using Shape = std::vector<std::size_t>;
using Vec = std::vector<double>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Trainable leaf owned by a model; grads persist across tapes.
struct Parameter {
    std::string name;
    Shape shape;
    Vec value;
    Vec grad;
    bool has_grad = false;

    Parameter() = default;
    Parameter(std::string n, Shape s)
        : name(std::move(n)), shape(std::move(s)),
          value(numel(shape), 0.0), grad(numel(shape), 0.0) {}

    void zero_grad() {
        std::fill(grad.begin(), grad.end(), 0.0);
        has_grad = false;
    }
};

class Tape;

// Lightweight handle to a tape node.
struct Tensor {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const;
    const Vec& values() const;
    double scalar() const;
    std::size_t size() const { return numel(shape()); }
};

class Tape {
  public:
    struct Node {
        Shape shape;
        Vec val;
        Vec grad;               // lazily allocated during backward
        bool touched = false;
        bool requires_grad = false;
        Parameter* param = nullptr;  // leaf binding, if any
        std::function<void(Tape&)> backward;
    };

    // ---- construction of leaves -------------------------------------------

    Tensor constant(Shape shape, Vec val) {
        if (numel(shape) != val.size())
            throw std::invalid_argument("constant: data size does not match shape");
        return push(std::move(shape), std::move(val), false, nullptr, {});
    }

    Tensor scalar_const(double v) { return constant({1}, {v}); }

    Tensor param(Parameter& p) {
        Tensor t = push(p.shape, p.value, grad_enabled_, grad_enabled_ ? &p : nullptr, {});
        return t;
    }

    // With grads disabled, parameter leaves become plain constants and no
    // backward closures are recorded anywhere downstream.
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

    // ---- node access ------------------------------------------------------

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const Vec& val(int id) const { return node(id).val; }
    const Shape& shape(int id) const { return node(id).shape; }

    Vec& grad_acc(int id) {
        Node& n = node(id);
        if (!n.touched) {
            n.grad.assign(numel(n.shape), 0.0);
            n.touched = true;
        }
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    // Drops all nodes at or past mark; used to bound memory in long
    // inference loops. Invalidates handles past the mark.
    void truncate(std::size_t mark) { nodes_.resize(mark); }

    void clear() { nodes_.clear(); }

    // ---- reverse pass -----------------------------------------------------

    void backward(const Tensor& loss) {
        if (loss.tape != this) throw std::invalid_argument("backward: tensor not on this tape");
        const Node& ln = node(loss.id);
        if (numel(ln.shape) != 1)
            throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(ln.shape));
        grad_acc(loss.id)[0] += 1.0;
        for (int id = loss.id; id >= 0; --id) {
            Node& n = node(id);
            if (!n.touched) continue;
            if (n.backward) n.backward(*this);
            if (n.param != nullptr) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
                n.param->has_grad = true;
            }
        }
        // Reset touch marks so a subsequent backward() accumulates afresh.
        for (auto& n : nodes_) {
            n.touched = false;
            n.grad.clear();
        }
    }

    Tensor push(Shape shape, Vec val, bool track, Parameter* p,
                std::function<void(Tape&)> back) {
        Node n;
        n.shape = std::move(shape);
        n.val = std::move(val);
        n.requires_grad = track;
        n.param = p;
        if (track) n.backward = std::move(back);
        nodes_.push_back(std::move(n));
        return Tensor{this, static_cast<int>(nodes_.size()) - 1};
    }

    bool tracked(int id) const { return node(id).requires_grad; }

  private:
    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

inline const Shape& Tensor::shape() const { return tape->shape(id); }
inline const Vec& Tensor::values() const { return tape->val(id); }
inline double Tensor::scalar() const {
    const Vec& v = values();
    if (v.size() != 1) throw std::invalid_argument("scalar(): tensor has " + std::to_string(v.size()) + " elements");
    return v[0];
}

// ===========================================================================
// Elementwise binary ops. Supported shape pairs: identical; one side scalar
// (1 element); (B,D) with (D) row-broadcast; (B,D) with (B,1) col-broadcast.
// Anything else is a loud shape error.
// ===========================================================================

namespace detail {

enum class BinMode { Same, ScalarLeft, ScalarRight, RowBcast, ColBcast };

inline BinMode bin_mode(const std::string& op, const Shape& a, const Shape& b) {
    if (a == b) return BinMode::Same;
    if (numel(b) == 1) return BinMode::ScalarRight;
    if (numel(a) == 1) return BinMode::ScalarLeft;
    if (a.size() == 2 && b.size() == 1 && a[1] == b[0]) return BinMode::RowBcast;
    if (a.size() == 2 && b.size() == 2 && b[0] == a[0] && b[1] == 1) return BinMode::ColBcast;
    shape_error(op, a, b);
}

// Maps output index to index into the broadcast operand.
inline std::size_t bcast_index(BinMode m, std::size_t i, std::size_t cols) {
    switch (m) {
        case BinMode::ScalarLeft:
        case BinMode::ScalarRight: return 0;
        case BinMode::RowBcast: return i % cols;
        case BinMode::ColBcast: return i / cols;
        default: return i;
    }
}

template <class FwdFn, class BackFn>
Tensor binary_op(const std::string& name, Tensor a, Tensor b, FwdFn f, BackFn df) {
    Tape& t = *a.tape;
    if (b.tape != a.tape) throw std::invalid_argument(name + ": operands on different tapes");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const BinMode mode = bin_mode(name, sa, sb);
    const bool a_is_out = (mode != BinMode::ScalarLeft);
    const Shape& so = a_is_out ? sa : sb;
    const std::size_t n = numel(so);
    const std::size_t cols = (so.size() == 2) ? so[1] : numel(so);
    const Vec& va = a.tape->val(a.id);
    const Vec& vb = b.tape->val(b.id);
    Vec out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a_is_out ? va[i] : va[0];
        const double y = a_is_out ? vb[bcast_index(mode, i, cols)] : vb[i];
        out[i] = f(x, y);
    }
    const bool req = t.tracked(a.id) || t.tracked(b.id);
    const int aid = a.id, bid = b.id;
    Tensor outT = t.push(so, std::move(out), req, nullptr, {});
    if (req) {
        const int oid = outT.id;
        t.node(oid).backward = [name, aid, bid, oid, mode, cols, a_is_out, df](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& va2 = tp.val(aid);
            const Vec& vb2 = tp.val(bid);
            const bool need_a = tp.tracked(aid);
            const bool need_b = tp.tracked(bid);
            Vec* ga = need_a ? &tp.grad_acc(aid) : nullptr;
            Vec* gb = need_b ? &tp.grad_acc(bid) : nullptr;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t ia = a_is_out ? i : 0;
                const std::size_t ib = a_is_out ? detail::bcast_index(mode, i, cols) : i;
                const double x = va2[ia];
                const double y = vb2[ib];
                double dx, dy;
                df(x, y, dx, dy);
                if (ga) (*ga)[ia] += g[i] * dx;
                if (gb) (*gb)[ib] += g[i] * dy;
            }
        };
    }
    return outT;
}

template <class FwdFn, class BackFn>
Tensor unary_op(const std::string& name, Tensor a, FwdFn f, BackFn df) {
    Tape& t = *a.tape;
    const Vec& va = a.values();
    Vec out(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i]);
    const bool req = t.tracked(a.id);
    Tensor outT = t.push(a.shape(), std::move(out), req, nullptr, {});
    if (req) {
        const int aid = a.id, oid = outT.id;
        t.node(oid).backward = [aid, oid, df](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& x = tp.val(aid);
            const Vec& y = tp.val(oid);
            Vec& ga = tp.grad_acc(aid);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
        };
    }
    (void)name;
    return outT;
}

}  // namespace detail

inline Tensor add(Tensor a, Tensor b) {
    return detail::binary_op("add", a, b,
        [](double x, double y) { return x + y; },
        [](double, double, double& dx, double& dy) { dx = 1.0; dy = 1.0; });
}

inline Tensor sub(Tensor a, Tensor b) {
    return detail::binary_op("sub", a, b,
        [](double x, double y) { return x - y; },
        [](double, double, double& dx, double& dy) { dx = 1.0; dy = -1.0; });
}

inline Tensor mul(Tensor a, Tensor b) {
    return detail::binary_op("mul", a, b,
        [](double x, double y) { return x * y; },
        [](double x, double y, double& dx, double& dy) { dx = y; dy = x; });
}

inline Tensor div(Tensor a, Tensor b) {
    return detail::binary_op("div", a, b,
        [](double x, double y) { return x / y; },
        [](double x, double y, double& dx, double& dy) {
            dx = 1.0 / y;
            dy = -x / (y * y);
        });
}

inline Tensor operator+(Tensor a, Tensor b) { return add(a, b); }
inline Tensor operator-(Tensor a, Tensor b) { return sub(a, b); }
inline Tensor operator*(Tensor a, Tensor b) { return mul(a, b); }
inline Tensor operator/(Tensor a, Tensor b) { return div(a, b); }

inline Tensor add_scalar(Tensor a, double c) {
    return detail::unary_op("add_scalar", a,
        [c](double x) { return x + c; },
        [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(Tensor a, double c) {
    return detail::unary_op("mul_scalar", a,
        [c](double x) { return x * c; },
        [c](double, double) { return c; });
}

inline Tensor neg(Tensor a) { return mul_scalar(a, -1.0); }

inline Tensor exp(Tensor a) {
    return detail::unary_op("exp", a,
        [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

inline Tensor log(Tensor a) {
    for (double x : a.values())
        if (!(x > 0.0)) throw std::domain_error("log: input must be positive, got " + std::to_string(x));
    return detail::unary_op("log", a,
        [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

inline Tensor log1p(Tensor a) {
    for (double x : a.values())
        if (!(x > -1.0)) throw std::domain_error("log1p: input must exceed -1, got " + std::to_string(x));
    return detail::unary_op("log1p", a,
        [](double x) { return std::log1p(x); },
        [](double x, double) { return 1.0 / (1.0 + x); });
}

inline Tensor sqrt(Tensor a) {
    for (double x : a.values())
        if (x < 0.0) throw std::domain_error("sqrt: input must be nonnegative, got " + std::to_string(x));
    return detail::unary_op("sqrt", a,
        [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

// Elementwise x^p for a fixed real exponent.
inline Tensor pow(Tensor a, double p) {
    const bool integral = (p == std::floor(p));
    for (double x : a.values())
        if (x < 0.0 && !integral)
            throw std::domain_error("pow: negative base with non-integer exponent");
    return detail::unary_op("pow", a,
        [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

inline Tensor silu(Tensor a) {
    return detail::unary_op("silu", a,
        [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

inline Tensor softplus(Tensor a) {
    auto sp = [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
    };
    return detail::unary_op("softplus", a, sp,
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Tensor sigmoid(Tensor a) {
    return detail::unary_op("sigmoid", a,
        [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

// max(x, c) with subgradient 0 on the clamped side.
inline Tensor clamp_min(Tensor a, double c) {
    return detail::unary_op("clamp_min", a,
        [c](double x) { return x < c ? c : x; },
        [c](double x, double) { return x < c ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(Tensor a) {
    Tape& t = *a.tape;
    const Vec& v = a.values();
    double s = 0.0;
    for (double x : v) s += x;
    const bool req = t.tracked(a.id);
    Tensor out = t.push({1}, {s}, req, nullptr, {});
    if (req) {
        const int aid = a.id, oid = out.id;
        t.node(oid).backward = [aid, oid](Tape& tp) {
            const double g = tp.node(oid).grad[0];
            Vec& ga = tp.grad_acc(aid);
            for (double& x : ga) x += g;
        };
    }
    return out;
}

inline Tensor mean(Tensor a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    return mul_scalar(sum(a), inv);
}

// ---------------------------------------------------------------------------
// Matrix multiply: (m,k) x (k,n) -> (m,n)
// ---------------------------------------------------------------------------

inline Tensor matmul(Tensor a, Tensor b) {
    Tape& t = *a.tape;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error("matmul", sa, sb);
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    const Vec& va = a.values();
    const Vec& vb = b.values();
    Vec out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double x = va[i * k + p];
            if (x == 0.0) continue;
            const double* brow = &vb[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    const bool req = t.tracked(a.id) || t.tracked(b.id);
    Tensor outT = t.push({m, n}, std::move(out), req, nullptr, {});
    if (req) {
        const int aid = a.id, bid = b.id, oid = outT.id;
        t.node(oid).backward = [aid, bid, oid, m, k, n](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& va2 = tp.val(aid);
            const Vec& vb2 = tp.val(bid);
            if (tp.tracked(aid)) {
                Vec& ga = tp.grad_acc(aid);  // dA = G B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = &g[i * n];
                        const double* brow = &vb2[p * n];
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
            }
            if (tp.tracked(bid)) {
                Vec& gb = tp.grad_acc(bid);  // dB = A^T G
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t i = 0; i < m; ++i) {
                        const double x = va2[i * k + p];
                        if (x == 0.0) continue;
                        const double* grow = &g[i * n];
                        double* brow = &gb[p * n];
                        for (std::size_t j = 0; j < n; ++j) brow[j] += x * grow[j];
                    }
            }
        };
    }
    return outT;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(Tensor a, Shape s) {
    Tape& t = *a.tape;
    if (numel(s) != a.size()) shape_error("reshape", a.shape(), s);
    const bool req = t.tracked(a.id);
    Tensor out = t.push(std::move(s), a.values(), req, nullptr, {});
    if (req) {
        const int aid = a.id, oid = out.id;
        t.node(oid).backward = [aid, oid](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            Vec& ga = tp.grad_acc(aid);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return out;
}

// Concatenate along the last axis. All inputs must agree on leading extents.
inline Tensor concat_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
    Tape& t = *parts[0].tape;
    Shape lead = parts[0].shape();
    lead.pop_back();
    std::size_t total_last = 0;
    bool req = false;
    for (const Tensor& p : parts) {
        Shape l = p.shape();
        const std::size_t last = l.back();
        l.pop_back();
        if (l != lead) shape_error("concat_last", parts[0].shape(), p.shape());
        total_last += last;
        req = req || t.tracked(p.id);
    }
    const std::size_t rows = numel(lead);
    Shape so = lead;
    so.push_back(total_last);
    Vec out(rows * total_last);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t last = p.shape().back();
        const Vec& v = p.values();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < last; ++j)
                out[r * total_last + off + j] = v[r * last + j];
        off += last;
    }
    Tensor outT = t.push(std::move(so), std::move(out), req, nullptr, {});
    if (req) {
        std::vector<int> ids;
        std::vector<std::size_t> lasts;
        for (const Tensor& p : parts) {
            ids.push_back(p.id);
            lasts.push_back(p.shape().back());
        }
        const int oid = outT.id;
        t.node(oid).backward = [ids, lasts, rows, total_last, oid](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            std::size_t off2 = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                const std::size_t last = lasts[k];
                if (tp.tracked(ids[k])) {
                    Vec& gp = tp.grad_acc(ids[k]);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < last; ++j)
                            gp[r * last + j] += g[r * total_last + off2 + j];
                }
                off2 += last;
            }
        };
    }
    return outT;
}

// Slice of the last axis: keeps [start, start+len).
inline Tensor slice_last(Tensor a, std::size_t start, std::size_t len) {
    Tape& t = *a.tape;
    Shape s = a.shape();
    const std::size_t last = s.back();
    if (start + len > last)
        throw std::invalid_argument("slice_last: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") exceeds extent " + std::to_string(last));
    Shape so = s;
    so.back() = len;
    const std::size_t rows = numel(s) / last;
    const Vec& v = a.values();
    Vec out(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) out[r * len + j] = v[r * last + start + j];
    const bool req = t.tracked(a.id);
    Tensor outT = t.push(std::move(so), std::move(out), req, nullptr, {});
    if (req) {
        const int aid = a.id, oid = outT.id;
        t.node(oid).backward = [aid, oid, rows, len, last, start](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            Vec& ga = tp.grad_acc(aid);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < len; ++j) ga[r * last + start + j] += g[r * len + j];
        };
    }
    return outT;
}

// Row slice of a (R,C) matrix: keeps rows [start, start+len).
inline Tensor slice_rows(Tensor a, std::size_t start, std::size_t len) {
    Tape& t = *a.tape;
    const Shape& s = a.shape();
    if (s.size() != 2) throw std::invalid_argument("slice_rows: expects rank-2, got " + shape_str(s));
    if (start + len > s[0])
        throw std::invalid_argument("slice_rows: range exceeds row count " + std::to_string(s[0]));
    const std::size_t cols = s[1];
    const Vec& v = a.values();
    Vec out(v.begin() + static_cast<std::ptrdiff_t>(start * cols),
            v.begin() + static_cast<std::ptrdiff_t>((start + len) * cols));
    const bool req = t.tracked(a.id);
    Tensor outT = t.push({len, cols}, std::move(out), req, nullptr, {});
    if (req) {
        const int aid = a.id, oid = outT.id;
        t.node(oid).backward = [aid, oid, start, len, cols](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            Vec& ga = tp.grad_acc(aid);
            for (std::size_t i = 0; i < len * cols; ++i) ga[start * cols + i] += g[i];
        };
    }
    return outT;
}

// ---------------------------------------------------------------------------
// Rowwise nonlinear ops
// ---------------------------------------------------------------------------

// Softmax along the last axis.
inline Tensor softmax_last(Tensor a) {
    Tape& t = *a.tape;
    const Shape& s = a.shape();
    const std::size_t cols = s.back();
    const std::size_t rows = numel(s) / cols;
    const Vec& v = a.values();
    Vec out(v.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &v[r * cols];
        double* y = &out[r * cols];
        double mx = x[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
    }
    const bool req = t.tracked(a.id);
    Tensor outT = t.push(s, std::move(out), req, nullptr, {});
    if (req) {
        const int aid = a.id, oid = outT.id;
        t.node(oid).backward = [aid, oid, rows, cols](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& y = tp.val(oid);
            Vec& ga = tp.grad_acc(aid);
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j)
                    ga[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
            }
        };
    }
    return outT;
}

// L2 norm along the last axis: (..., D) -> (..., 1).
inline Tensor l2norm_last(Tensor a) {
    Tape& t = *a.tape;
    Shape s = a.shape();
    const std::size_t cols = s.back();
    const std::size_t rows = numel(s) / cols;
    const Vec& v = a.values();
    Vec out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) acc += v[r * cols + j] * v[r * cols + j];
        out[r] = std::sqrt(acc);
    }
    Shape so = s;
    so.back() = 1;
    const bool req = t.tracked(a.id);
    Tensor outT = t.push(std::move(so), std::move(out), req, nullptr, {});
    if (req) {
        const int aid = a.id, oid = outT.id;
        t.node(oid).backward = [aid, oid, rows, cols](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& x = tp.val(aid);
            const Vec& y = tp.val(oid);
            Vec& ga = tp.grad_acc(aid);
            for (std::size_t r = 0; r < rows; ++r) {
                const double inv = (y[r] > 0.0) ? 1.0 / y[r] : 0.0;
                for (std::size_t j = 0; j < cols; ++j)
                    ga[r * cols + j] += g[r] * x[r * cols + j] * inv;
            }
        };
    }
    return outT;
}

// RMSNorm over the last axis with learned gain: y = x * gain / rms(x).
inline Tensor rms_norm(Tensor x, Tensor gain, double eps = 1e-6) {
    Tape& t = *x.tape;
    const Shape& s = x.shape();
    const std::size_t cols = s.back();
    const std::size_t rows = numel(s) / cols;
    if (gain.shape() != Shape{cols}) shape_error("rms_norm", s, gain.shape());
    const Vec& xv = x.values();
    const Vec& gv = gain.values();
    Vec out(xv.size());
    Vec rinv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ms = 0.0;
        for (std::size_t j = 0; j < cols; ++j) ms += xv[r * cols + j] * xv[r * cols + j];
        ms = ms / static_cast<double>(cols) + eps;
        rinv[r] = 1.0 / std::sqrt(ms);
        for (std::size_t j = 0; j < cols; ++j)
            out[r * cols + j] = xv[r * cols + j] * gv[j] * rinv[r];
    }
    const bool req = t.tracked(x.id) || t.tracked(gain.id);
    Tensor outT = t.push(s, std::move(out), req, nullptr, {});
    if (req) {
        const int xid = x.id, gid = gain.id, oid = outT.id;
        t.node(oid).backward = [xid, gid, oid, rows, cols, rinv](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& xv2 = tp.val(xid);
            const Vec& gv2 = tp.val(gid);
            if (tp.tracked(xid)) {
                Vec& gx = tp.grad_acc(xid);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double ri = rinv[r];
                    double dot = 0.0;  // sum_j G_j gain_j x_j
                    for (std::size_t j = 0; j < cols; ++j)
                        dot += g[r * cols + j] * gv2[j] * xv2[r * cols + j];
                    const double c = ri * ri * ri * dot / static_cast<double>(cols);
                    for (std::size_t j = 0; j < cols; ++j)
                        gx[r * cols + j] += g[r * cols + j] * gv2[j] * ri - c * xv2[r * cols + j];
                }
            }
            if (tp.tracked(gid)) {
                Vec& gg = tp.grad_acc(gid);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < cols; ++j)
                        gg[j] += g[r * cols + j] * xv2[r * cols + j] * rinv[r];
            }
        };
    }
    return outT;
}

// Select a single row of a (N,D) table: embedding lookup.
inline Tensor row_select(Tensor table, std::size_t row) {
    const Shape s = table.shape();  // copy: pushes below may reallocate node storage
    if (s.size() != 2) throw std::invalid_argument("row_select: expects rank-2, got " + shape_str(s));
    if (row >= s[0]) throw std::invalid_argument("row_select: row " + std::to_string(row) +
                                                 " out of range " + std::to_string(s[0]));
    Tensor r = slice_rows(table, row, 1);
    return reshape(r, {s[1]});
}

// ---------------------------------------------------------------------------
// Rotary position rotation. cos/sin tables are constants of the same shape
// as x restricted to pairs: tables have extent cols/2 along the last axis.
// ---------------------------------------------------------------------------

inline Tensor rope_rotate(Tensor x, const Vec& cos_tab, const Vec& sin_tab) {
    Tape& t = *x.tape;
    const Shape& s = x.shape();
    const std::size_t cols = s.back();
    const std::size_t rows = numel(s) / cols;
    if (cols % 2 != 0) throw std::invalid_argument("rope_rotate: last extent must be even");
    const std::size_t half = cols / 2;
    if (cos_tab.size() != rows * half || sin_tab.size() != rows * half)
        throw std::invalid_argument("rope_rotate: table size mismatch");
    const Vec& v = x.values();
    Vec out(v.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < half; ++p) {
            const double c = cos_tab[r * half + p];
            const double sn = sin_tab[r * half + p];
            const double x0 = v[r * cols + 2 * p];
            const double x1 = v[r * cols + 2 * p + 1];
            out[r * cols + 2 * p] = x0 * c - x1 * sn;
            out[r * cols + 2 * p + 1] = x0 * sn + x1 * c;
        }
    const bool req = t.tracked(x.id);
    Tensor outT = t.push(s, std::move(out), req, nullptr, {});
    if (req) {
        const int xid = x.id, oid = outT.id;
        t.node(oid).backward = [xid, oid, rows, cols, half, cos_tab, sin_tab](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            Vec& gx = tp.grad_acc(xid);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t p = 0; p < half; ++p) {
                    const double c = cos_tab[r * half + p];
                    const double sn = sin_tab[r * half + p];
                    const double g0 = g[r * cols + 2 * p];
                    const double g1 = g[r * cols + 2 * p + 1];
                    gx[r * cols + 2 * p] += g0 * c + g1 * sn;
                    gx[r * cols + 2 * p + 1] += -g0 * sn + g1 * c;
                }
        };
    }
    return outT;
}

// ---------------------------------------------------------------------------
// Fused multi-head causal attention.
// q: (Tq, D), k/v: (Tc, D). Query row i sits at absolute position
// q_offset + i and attends to context rows j <= q_offset + i.
// ---------------------------------------------------------------------------

inline Tensor causal_attention(Tensor q, Tensor k, Tensor v, std::size_t n_heads,
                               std::size_t q_offset = 0) {
    Tape& t = *q.tape;
    const Shape& sq = q.shape();
    const Shape& sk = k.shape();
    const Shape& sv = v.shape();
    if (sq.size() != 2 || sk.size() != 2 || sv.size() != 2 || sq[1] != sk[1] || sk != sv)
        shape_error("causal_attention", sq, sk);
    const std::size_t tq = sq[0], tc = sk[0], dim = sq[1];
    if (dim % n_heads != 0) throw std::invalid_argument("causal_attention: dim not divisible by heads");
    const std::size_t hd = dim / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const Vec& qv = q.values();
    const Vec& kv = k.values();
    const Vec& vv = v.values();
    Vec out(tq * dim, 0.0);
    Vec attn(n_heads * tq * tc, 0.0);  // saved softmax weights for backward
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t hofs = h * hd;
        for (std::size_t i = 0; i < tq; ++i) {
            const std::size_t limit = std::min(q_offset + i + 1, tc);
            double* arow = &attn[(h * tq + i) * tc];
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < limit; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < hd; ++p)
                    s += qv[i * dim + hofs + p] * kv[j * dim + hofs + p];
                arow[j] = s * scale;
                mx = std::max(mx, arow[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
                arow[j] = std::exp(arow[j] - mx);
                z += arow[j];
            }
            for (std::size_t j = 0; j < limit; ++j) arow[j] /= z;
            for (std::size_t j = 0; j < limit; ++j) {
                const double a = arow[j];
                for (std::size_t p = 0; p < hd; ++p)
                    out[i * dim + hofs + p] += a * vv[j * dim + hofs + p];
            }
        }
    }
    const bool req = t.tracked(q.id) || t.tracked(k.id) || t.tracked(v.id);
    Tensor outT = t.push({tq, dim}, std::move(out), req, nullptr, {});
    if (req) {
        const int qid = q.id, kid = k.id, vid = v.id, oid = outT.id;
        auto attn_saved = std::make_shared<Vec>(std::move(attn));
        t.node(oid).backward = [qid, kid, vid, oid, n_heads, tq, tc, dim, hd, scale,
                                q_offset, attn_saved](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& qv2 = tp.val(qid);
            const Vec& kv2 = tp.val(kid);
            const Vec& vv2 = tp.val(vid);
            Vec& gq = tp.grad_acc(qid);
            Vec& gk = tp.grad_acc(kid);
            Vec& gv = tp.grad_acc(vid);
            const Vec& attn2 = *attn_saved;
            for (std::size_t h = 0; h < n_heads; ++h) {
                const std::size_t hofs = h * hd;
                for (std::size_t i = 0; i < tq; ++i) {
                    const std::size_t limit = std::min(q_offset + i + 1, tc);
                    const double* arow = &attn2[(h * tq + i) * tc];
                    // da_j = g_i . v_j ; ds_j = a_j (da_j - sum a da)
                    double dot = 0.0;
                    Vec da(limit);
                    for (std::size_t j = 0; j < limit; ++j) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < hd; ++p)
                            acc += g[i * dim + hofs + p] * vv2[j * dim + hofs + p];
                        da[j] = acc;
                        dot += arow[j] * acc;
                        for (std::size_t p = 0; p < hd; ++p)
                            gv[j * dim + hofs + p] += arow[j] * g[i * dim + hofs + p];
                    }
                    for (std::size_t j = 0; j < limit; ++j) {
                        const double ds = arow[j] * (da[j] - dot) * scale;
                        for (std::size_t p = 0; p < hd; ++p) {
                            gq[i * dim + hofs + p] += ds * kv2[j * dim + hofs + p];
                            gk[j * dim + hofs + p] += ds * qv2[i * dim + hofs + p];
                        }
                    }
                }
            }
        };
    }
    return outT;
}

// Affine layer helper: x (B,K) * W (K,N) + b (N), composed from primitives.
inline Tensor affine(Tensor x, Tensor w, Tensor b) { return add(matmul(x, w), b); }

}  // namespace sphlat
