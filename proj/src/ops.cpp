// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hawaii/autograd.hpp"

namespace hawaii {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

bool tracking(const std::vector<Tensor>& inputs) {
    if (Tape::active() == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

Tensor make_output(const char* op, Shape shape, std::vector<double> values) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    Tensor out(std::move(impl));
    check_finite(out, op);
    return out;
}

void record(const char* op, std::vector<ImplPtr> inputs, const Tensor& out, Tape::BackwardFn fn) {
    Tape::active()->record(op, std::move(inputs), out.shared_impl(), std::move(fn));
}

// Gradient sink for an input, or nullptr when the input needs none.
double* sink(TensorImpl* impl) { return impl->requires_grad ? impl->grad_buffer() : nullptr; }

// For rules that add several terms into one gradient element: the node's
// contribution is summed locally and added once, so a tensor feeding several
// nodes gets exactly the sum of their separate contributions.
class StagedSink {
public:
    explicit StagedSink(TensorImpl* impl) : target_(sink(impl)) {
        if (target_) local_.assign(impl->data.size(), 0.0);
    }
    StagedSink(const StagedSink&) = delete;
    StagedSink& operator=(const StagedSink&) = delete;
    ~StagedSink() {
        for (std::size_t i = 0; i < local_.size(); ++i) target_[i] += local_[i];
    }
    double* get() { return target_ ? local_.data() : nullptr; }

private:
    double* target_;
    std::vector<double> local_;
};

void require_rank2(const Tensor& t, const char* op, const char* name) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": " + name + " must be rank 2, got " + shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
}

// Bias / per-row vectors may be given flat or as a single row / column.
std::size_t vector_length(const Tensor& t, const char* op, const char* name) {
    const auto& s = t.shape();
    if (s.size() == 1) return s[0];
    if (s.size() == 2 && (s[0] == 1 || s[1] == 1)) return s[0] * s[1];
    throw ShapeError(std::string(op) + ": " + name + " must be a vector, got " + shape_to_string(s));
}

// c[m×n] += a[m×k]·b[k×n] with optional transposes, all row-major.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
              bool trans_a, bool trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = trans_a ? a[p * m + i] : a[i * k + p];
            if (av == 0.0) continue;
            if (trans_b) {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
            } else {
                const double* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul", "a");
    require_rank2(b, "matmul", "b");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
    }
    std::vector<double> c(m * n, 0.0);
    gemm_acc(a.data().data(), b.data().data(), c.data(), m, k, n, false, false);
    Tensor out = make_output("matmul", {m, n}, std::move(c));
    if (tracking({&a, &b})) {
        auto* ai = a.impl();
        auto* bi = b.impl();
        record("matmul", {a.shared_impl(), b.shared_impl()}, out, [ai, bi, m, k, n](const TensorImpl& o) {
            StagedSink sa(ai), sb(bi);
            if (double* ga = sa.get()) gemm_acc(o.grad.data(), bi->data.data(), ga, m, n, k, false, true);
            if (double* gb = sb.get()) gemm_acc(ai->data.data(), o.grad.data(), gb, k, m, n, true, false);
        });
    }
    return out;
}

Tensor transpose(const Tensor& x) {
    require_rank2(x, "transpose", "x");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> v(r * c);
    const auto d = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j * r + i] = d[i * c + j];
    Tensor out = make_output("transpose", {c, r}, std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        record("transpose", {x.shared_impl()}, out, [xi, r, c](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
        });
    }
    return out;
}

namespace {

template <typename Forward, typename GradA, typename GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Forward f, GradA ga_fn, GradB gb_fn) {
    require_same_shape(a, b, op);
    const auto ad = a.data(), bd = b.data();
    std::vector<double> v(ad.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(ad[i], bd[i]);
    Tensor out = make_output(op, a.shape(), std::move(v));
    if (tracking({&a, &b})) {
        auto* ai = a.impl();
        auto* bi = b.impl();
        record(op, {a.shared_impl(), b.shared_impl()}, out, [ai, bi, ga_fn, gb_fn](const TensorImpl& o) {
            double* ga = sink(ai);
            double* gb = sink(bi);
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                if (ga) ga[i] += ga_fn(o.grad[i], ai->data[i], bi->data[i]);
                if (gb) gb[i] += gb_fn(o.grad[i], ai->data[i], bi->data[i]);
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
        [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
        [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& x, double factor) {
    const auto d = x.data();
    std::vector<double> v(d.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = d[i] * factor;
    Tensor out = make_output("scale", x.shape(), std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        record("scale", {x.shared_impl()}, out, [xi, factor](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
        });
    }
    return out;
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
    require_rank2(x, "add_row", "x");
    const std::size_t n = x.rows(), k = x.cols();
    if (vector_length(bias, "add_row", "bias") != k) {
        throw ShapeError("add_row: bias " + shape_to_string(bias.shape()) + " does not match " +
                         shape_to_string(x.shape()));
    }
    const auto xd = x.data(), bd = bias.data();
    std::vector<double> v(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) v[i * k + j] = xd[i * k + j] + bd[j];
    Tensor out = make_output("add_row", {n, k}, std::move(v));
    if (tracking({&x, &bias})) {
        auto* xi = x.impl();
        auto* bi = bias.impl();
        record("add_row", {x.shared_impl(), bias.shared_impl()}, out, [xi, bi, n, k](const TensorImpl& o) {
            if (double* gx = sink(xi))
                for (std::size_t i = 0; i < n * k; ++i) gx[i] += o.grad[i];
            StagedSink sb(bi);
            if (double* gb = sb.get())
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < k; ++j) gb[j] += o.grad[i * k + j];
        });
    }
    return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    require_rank2(x, "scale_rows", "x");
    const std::size_t n = x.rows(), k = x.cols();
    if (vector_length(s, "scale_rows", "s") != n) {
        throw ShapeError("scale_rows: scale " + shape_to_string(s.shape()) + " does not match " +
                         shape_to_string(x.shape()));
    }
    const auto xd = x.data(), sd = s.data();
    std::vector<double> v(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) v[i * k + j] = xd[i * k + j] * sd[i];
    Tensor out = make_output("scale_rows", {n, k}, std::move(v));
    if (tracking({&x, &s})) {
        auto* xi = x.impl();
        auto* si = s.impl();
        record("scale_rows", {x.shared_impl(), s.shared_impl()}, out, [xi, si, n, k](const TensorImpl& o) {
            StagedSink ss(si);
            double* gx = sink(xi);
            double* gs = ss.get();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    const double g = o.grad[i * k + j];
                    if (gx) gx[i * k + j] += g * si->data[i];
                    if (gs) gs[i] += g * xi->data[i * k + j];
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    const auto d = x.data();
    std::vector<double> v(d.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = gelu_value(d[i]);
    Tensor out = make_output("gelu", x.shape(), std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        record("gelu", {x.shared_impl()}, out, [xi](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * gelu_derivative(xi->data[i]);
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank2(x, "layer_norm", "x");
    const std::size_t n = x.rows(), k = x.cols();
    if (vector_length(gain, "layer_norm", "gain") != k || vector_length(bias, "layer_norm", "bias") != k) {
        throw ShapeError("layer_norm: affine parameters do not match " + shape_to_string(x.shape()));
    }
    const auto xd = x.data(), gd = gain.data(), bd = bias.data();
    std::vector<double> v(n * k);
    std::vector<double> xhat(n * k);
    std::vector<double> inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < k; ++j) mu += xd[i * k + j];
        mu /= static_cast<double>(k);
        double var = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double c = xd[i * k + j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(k);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < k; ++j) {
            xhat[i * k + j] = (xd[i * k + j] - mu) * inv_std[i];
            v[i * k + j] = xhat[i * k + j] * gd[j] + bd[j];
        }
    }
    Tensor out = make_output("layer_norm", {n, k}, std::move(v));
    if (tracking({&x, &gain, &bias})) {
        auto* xi = x.impl();
        auto* gi = gain.impl();
        auto* bi = bias.impl();
        record("layer_norm", {x.shared_impl(), gain.shared_impl(), bias.shared_impl()}, out,
               [xi, gi, bi, n, k, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl& o) {
                   StagedSink sg(gi), sb(bi);
                   double* gx = sink(xi);
                   double* gg = sg.get();
                   double* gb = sb.get();
                   const double kd = static_cast<double>(k);
                   for (std::size_t i = 0; i < n; ++i) {
                       const double* go = o.grad.data() + i * k;
                       const double* xh = xhat.data() + i * k;
                       double sum_d = 0.0, sum_dx = 0.0;
                       for (std::size_t j = 0; j < k; ++j) {
                           const double d = go[j] * gi->data[j];
                           sum_d += d;
                           sum_dx += d * xh[j];
                           if (gg) gg[j] += go[j] * xh[j];
                           if (gb) gb[j] += go[j];
                       }
                       if (gx) {
                           for (std::size_t j = 0; j < k; ++j) {
                               const double d = go[j] * gi->data[j];
                               gx[i * k + j] += inv_std[i] * (d - sum_d / kd - xh[j] * sum_dx / kd);
                           }
                       }
                   }
               });
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_rank2(x, "softmax_rows", "x");
    check_finite(x, "softmax_rows input");
    const std::size_t p = x.rows(), q = x.cols();
    const auto d = x.data();
    std::vector<double> v(p * q);
    for (std::size_t i = 0; i < p; ++i) {
        const double* row = d.data() + i * q;
        const double mx = *std::max_element(row, row + q);
        double z = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            v[i * q + j] = std::exp(row[j] - mx);
            z += v[i * q + j];
        }
        for (std::size_t j = 0; j < q; ++j) v[i * q + j] /= z;
    }
    Tensor out = make_output("softmax_rows", {p, q}, std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        record("softmax_rows", {x.shared_impl()}, out, [xi, p, q](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t i = 0; i < p; ++i) {
                const double* y = o.data.data() + i * q;
                const double* gy = o.grad.data() + i * q;
                double dot = 0.0;
                for (std::size_t j = 0; j < q; ++j) dot += y[j] * gy[j];
                for (std::size_t j = 0; j < q; ++j) g[i * q + j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

Tensor mean_rows(const Tensor& x) {
    require_rank2(x, "mean_rows", "x");
    const std::size_t p = x.rows(), q = x.cols();
    const auto d = x.data();
    std::vector<double> v(q, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) v[j] += d[i * q + j];
    for (double& e : v) e /= static_cast<double>(p);
    Tensor out = make_output("mean_rows", {1, q}, std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        record("mean_rows", {x.shared_impl()}, out, [xi, p, q](const TensorImpl& o) {
            double* g = sink(xi);
            const double w = 1.0 / static_cast<double>(p);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j) g[i * q + j] += o.grad[j] * w;
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double e : x.data()) s += e;
    Tensor out = make_output("sum", {}, {s});
    if (tracking({&x})) {
        auto* xi = x.impl();
        record("sum", {x.shared_impl()}, out, [xi](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t i = 0; i < xi->data.size(); ++i) g[i] += o.grad[0];
        });
    }
    return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse");
    const auto pd = pred.data(), td = target.data();
    const double count = static_cast<double>(pd.size());
    double s = 0.0;
    for (std::size_t i = 0; i < pd.size(); ++i) {
        const double d = pd[i] - td[i];
        s += d * d;
    }
    Tensor out = make_output("mse", {}, {s / count});
    if (tracking({&pred, &target})) {
        auto* pi = pred.impl();
        auto* ti = target.impl();
        record("mse", {pred.shared_impl(), target.shared_impl()}, out, [pi, ti, count](const TensorImpl& o) {
            double* gp = sink(pi);
            double* gt = sink(ti);
            const double w = 2.0 * o.grad[0] / count;
            for (std::size_t i = 0; i < pi->data.size(); ++i) {
                const double d = w * (pi->data[i] - ti->data[i]);
                if (gp) gp[i] += d;
                if (gt) gt[i] -= d;
            }
        });
    }
    return out;
}

Tensor per_token_mse(const Tensor& pred, const Tensor& target) {
    require_rank2(pred, "per_token_mse", "pred");
    require_same_shape(pred, target, "per_token_mse");
    const std::size_t m = pred.rows(), width = pred.cols();
    const auto pd = pred.data(), td = target.data();
    std::vector<double> v(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t d = 0; d < width; ++d) {
            const double e = pd[j * width + d] - td[j * width + d];
            v[j] += e * e;
        }
        v[j] /= static_cast<double>(width);
    }
    Tensor out = make_output("per_token_mse", {m}, std::move(v));
    if (tracking({&pred, &target})) {
        auto* pi = pred.impl();
        auto* ti = target.impl();
        record("per_token_mse", {pred.shared_impl(), target.shared_impl()}, out,
               [pi, ti, m, width](const TensorImpl& o) {
                   double* gp = sink(pi);
                   double* gt = sink(ti);
                   for (std::size_t j = 0; j < m; ++j) {
                       const double w = 2.0 * o.grad[j] / static_cast<double>(width);
                       for (std::size_t d = 0; d < width; ++d) {
                           const std::size_t i = j * width + d;
                           const double g = w * (pi->data[i] - ti->data[i]);
                           if (gp) gp[i] += g;
                           if (gt) gt[i] -= g;
                       }
                   }
               });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
    require_rank2(logits, "cross_entropy", "logits");
    const std::size_t len = logits.rows(), vocab = logits.cols();
    if (targets.size() != len) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(len) + " positions");
    }
    for (std::size_t t = 0; t < len; ++t) {
        if (targets[t] >= vocab) {
            throw Error("cross_entropy: target " + std::to_string(targets[t]) + " at position " +
                        std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
        }
    }
    const auto d = logits.data();
    std::vector<double> probs(len * vocab);
    double total = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
        const double* row = d.data() + t * vocab;
        const double mx = *std::max_element(row, row + vocab);
        double z = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        total += lse - row[targets[t]];
        for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] = std::exp(row[j] - lse);
    }
    Tensor out = make_output("cross_entropy", {}, {total / static_cast<double>(len)});
    if (tracking({&logits})) {
        auto* li = logits.impl();
        std::vector<std::size_t> tgt(targets.begin(), targets.end());
        record("cross_entropy", {logits.shared_impl()}, out,
               [li, len, vocab, probs = std::move(probs), tgt = std::move(tgt)](const TensorImpl& o) {
                   double* g = sink(li);
                   const double w = o.grad[0] / static_cast<double>(len);
                   for (std::size_t t = 0; t < len; ++t) {
                       for (std::size_t j = 0; j < vocab; ++j) {
                           const double onehot = j == tgt[t] ? 1.0 : 0.0;
                           g[t * vocab + j] += w * (probs[t * vocab + j] - onehot);
                       }
                   }
               });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
    }
    Tensor out = make_output("reshape", std::move(shape), x.to_vector());
    if (tracking({&x})) {
        auto* xi = x.impl();
        record("reshape", {x.shared_impl()}, out, [xi](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& tensors, std::size_t axis) {
    if (tensors.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = tensors.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        const Shape& s = tensors[t].shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
        if (!ok) {
            throw ShapeError("concat: input " + std::to_string(t) + " has shape " + shape_to_string(s) +
                             ", incompatible with " + shape_to_string(first) + " along axis " +
                             std::to_string(axis));
        }
        out_shape[axis] += s[axis];
    }
    // outer = product of extents before axis; each input contributes a
    // contiguous run of extent(axis)·inner elements per outer index.
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
    std::vector<std::size_t> runs;
    for (const auto& t : tensors) runs.push_back(t.shape()[axis] * inner);
    const std::size_t out_run = out_shape[axis] * inner;

    std::vector<double> v(shape_numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        const auto d = tensors[t].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(d.data() + o * runs[t], runs[t], v.data() + o * out_run + offset);
        offset += runs[t];
    }
    Tensor out = make_output("concat", out_shape, std::move(v));
    if (tracking(tensors)) {
        std::vector<ImplPtr> inputs;
        std::vector<TensorImpl*> raw;
        for (const auto& t : tensors) {
            inputs.push_back(t.shared_impl());
            raw.push_back(t.impl());
        }
        record("concat", std::move(inputs), out, [raw, runs, outer, out_run](const TensorImpl& o) {
            std::size_t off = 0;
            for (std::size_t t = 0; t < raw.size(); ++t) {
                if (double* g = sink(raw[t])) {
                    for (std::size_t q = 0; q < outer; ++q)
                        for (std::size_t i = 0; i < runs[t]; ++i) g[q * runs[t] + i] += o.grad[q * out_run + off + i];
                }
                off += runs[t];
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_rows", "x");
    if (begin >= end || end > x.rows()) {
        throw ShapeError("slice_rows: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") for " + shape_to_string(x.shape()));
    }
    const std::size_t k = x.cols();
    const auto d = x.data();
    std::vector<double> v(d.begin() + static_cast<std::ptrdiff_t>(begin * k),
                          d.begin() + static_cast<std::ptrdiff_t>(end * k));
    Tensor out = make_output("slice_rows", {end - begin, k}, std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        record("slice_rows", {x.shared_impl()}, out, [xi, begin, k](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * k + i] += o.grad[i];
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank2(x, "gather_rows", "x");
    if (rows.empty()) throw ShapeError("gather_rows: empty index list");
    const std::size_t n = x.rows(), k = x.cols();
    const auto d = x.data();
    std::vector<double> v(rows.size() * k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                             shape_to_string(x.shape()));
        }
        std::copy_n(d.data() + rows[i] * k, k, v.data() + i * k);
    }
    Tensor out = make_output("gather_rows", {rows.size(), k}, std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        record("gather_rows", {x.shared_impl()}, out, [xi, k, idx = std::move(idx)](const TensorImpl& o) {
            StagedSink sx(xi);
            double* g = sx.get();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < k; ++j) g[idx[i] * k + j] += o.grad[i * k + j];
        });
    }
    return out;
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
    require_rank2(x, "pick", "x");
    const std::size_t n = x.rows(), e = x.cols();
    if (index.size() != n) throw ShapeError("pick: index length does not match rows of " + shape_to_string(x.shape()));
    const auto d = x.data();
    std::vector<double> v(n);
    for (std::size_t t = 0; t < n; ++t) {
        if (index[t] >= e) throw ShapeError("pick: column index out of range");
        v[t] = d[t * e + index[t]];
    }
    Tensor out = make_output("pick", {n}, std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        std::vector<std::size_t> idx(index.begin(), index.end());
        record("pick", {x.shared_impl()}, out, [xi, e, idx = std::move(idx)](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t t = 0; t < idx.size(); ++t) g[t * e + idx[t]] += o.grad[t];
        });
    }
    return out;
}

Tensor index_add_rows(const Tensor& base, const std::vector<Tensor>& parts,
                      const std::vector<std::vector<std::size_t>>& rows) {
    require_rank2(base, "index_add_rows", "base");
    if (parts.size() != rows.size()) throw ShapeError("index_add_rows: parts and row lists differ in length");
    const std::size_t n = base.rows(), k = base.cols();
    std::vector<double> v = base.to_vector();
    for (std::size_t p = 0; p < parts.size(); ++p) {
        require_rank2(parts[p], "index_add_rows", "part");
        if (parts[p].cols() != k || parts[p].rows() != rows[p].size()) {
            throw ShapeError("index_add_rows: part " + std::to_string(p) + " has shape " +
                             shape_to_string(parts[p].shape()) + " for " + std::to_string(rows[p].size()) +
                             " rows of width " + std::to_string(k));
        }
        const auto d = parts[p].data();
        for (std::size_t i = 0; i < rows[p].size(); ++i) {
            if (rows[p][i] >= n) throw ShapeError("index_add_rows: row index out of range");
            for (std::size_t j = 0; j < k; ++j) v[rows[p][i] * k + j] += d[i * k + j];
        }
    }
    Tensor out = make_output("index_add_rows", {n, k}, std::move(v));
    std::vector<Tensor> all = parts;
    all.push_back(base);
    if (tracking(all)) {
        std::vector<ImplPtr> inputs;
        std::vector<TensorImpl*> raw;
        for (const auto& t : all) {
            inputs.push_back(t.shared_impl());
            raw.push_back(t.impl());
        }
        record("index_add_rows", std::move(inputs), out, [raw, rows, k](const TensorImpl& o) {
            if (double* gb = sink(raw.back()))
                for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
            for (std::size_t p = 0; p < rows.size(); ++p) {
                double* g = sink(raw[p]);
                if (!g) continue;
                for (std::size_t i = 0; i < rows[p].size(); ++i)
                    for (std::size_t j = 0; j < k; ++j) g[i * k + j] += o.grad[rows[p][i] * k + j];
            }
        });
    }
    return out;
}

namespace {

// Maps each output flat index of pixel_unshuffle to its source flat index.
std::vector<std::size_t> unshuffle_permutation(std::size_t g, std::size_t channels, std::size_t r) {
    const std::size_t go = g / r;
    const std::size_t co = channels * r * r;
    std::vector<std::size_t> src(g * g * channels);
    for (std::size_t y = 0; y < go; ++y)
        for (std::size_t x = 0; x < go; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t dy = 0; dy < r; ++dy)
                    for (std::size_t dx = 0; dx < r; ++dx) {
                        const std::size_t out = (y * go + x) * co + c * r * r + dy * r + dx;
                        src[out] = ((y * r + dy) * g + (x * r + dx)) * channels + c;
                    }
    return src;
}

void require_unshuffle(const Shape& s, std::size_t g, std::size_t r, const char* op) {
    if (r == 0 || g % r != 0) {
        throw ShapeError(std::string(op) + ": factor " + std::to_string(r) + " does not divide grid " +
                         std::to_string(g) + " of " + shape_to_string(s));
    }
}

Tensor permute(const char* op, const Tensor& x, Shape shape, const std::vector<std::size_t>& src) {
    const auto d = x.data();
    std::vector<double> v(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) v[i] = d[src[i]];
    Tensor out = make_output(op, std::move(shape), std::move(v));
    if (tracking({&x})) {
        auto* xi = x.impl();
        record(op, {x.shared_impl()}, out, [xi, src](const TensorImpl& o) {
            double* g = sink(xi);
            for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += o.grad[i];
        });
    }
    return out;
}

}  // namespace

Tensor pixel_unshuffle(const Tensor& feat, std::size_t r) {
    const Shape& s = feat.shape();
    if (s.size() != 3 || s[0] != s[1]) {
        throw ShapeError("pixel_unshuffle: expected square [g×g×C], got " + shape_to_string(s));
    }
    require_unshuffle(s, s[0], r, "pixel_unshuffle");
    const std::size_t g = s[0], c = s[2];
    return permute("pixel_unshuffle", feat, {g / r, g / r, c * r * r}, unshuffle_permutation(g, c, r));
}

Tensor pixel_shuffle(const Tensor& feat, std::size_t r) {
    const Shape& s = feat.shape();
    if (s.size() != 3 || s[0] != s[1] || r == 0 || s[2] % (r * r) != 0) {
        throw ShapeError("pixel_shuffle: cannot fold " + shape_to_string(s) + " by " + std::to_string(r));
    }
    const std::size_t g = s[0] * r, c = s[2] / (r * r);
    const auto fwd = unshuffle_permutation(g, c, r);
    std::vector<std::size_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
    return permute("pixel_shuffle", feat, {g, g, c}, inv);
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, Tensor& x, double eps) {
    if (!(eps > 0.0)) throw Error("finite_difference_grad: eps must be positive");
    auto values = x.mutable_data();
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + eps;
        const double up = f(x);
        values[i] = saved - eps;
        const double down = f(x);
        values[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NonFiniteError("finite_difference_grad: non-finite evaluation at element " + std::to_string(i));
        }
        g[i] = (up - down) / (2.0 * eps);
    }
    return Tensor::from(x.shape(), std::move(g));
}

}  // namespace hawaii
