#include "qdyn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "qdyn/kernels.hpp"

namespace qdyn::ad {

namespace {

template <class F>
void for_each_index(int64_t n, F&& f) {
#ifdef _OPENMP
    if (kernels::parallel_enabled() && n > 32768) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (int64_t i = 0; i < n; ++i) f(i);
}

Tape* common_tape(const Tensor& a, const Tensor& b, const char* op) {
    Tape* ta = a.tape();
    Tape* tb = b.tape();
    if (ta && tb && ta != tb)
        throw Error(std::string(op) + ": operands recorded on different tapes");
    return ta ? ta : tb;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

// outer x axis x inner decomposition used by concat/slice.
struct AxisSplit {
    int64_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
    AxisSplit r;
    for (int i = 0; i < axis; ++i) r.outer *= s[i];
    r.axis = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

} // namespace

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string r = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

// ---- Tensor ----------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (numel(shape_) != static_cast<int64_t>(values.size()))
        throw ShapeError("tensor: shape " + shape_str(shape_) + " does not hold " +
                         std::to_string(values.size()) + " values");
    data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(static_cast<size_t>(numel(shape)), 0.0);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double fill) {
    std::vector<double> v(static_cast<size_t>(numel(shape)), fill);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::span<const double> Tensor::data() const {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

double Tensor::value() const {
    if (size() != 1) throw ShapeError("value: tensor " + shape_str(shape_) + " is not scalar");
    return (*data_)[0];
}

// ---- Tape ------------------------------------------------------------

class OpRecorder {
public:
    static Tensor make(Tape* tape, Shape shape,
                       std::shared_ptr<const std::vector<double>> data,
                       std::vector<int> parents, Tape::BackFn back) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        if (tape) {
            t.tape_ = tape;
            t.node_ = tape->record(t.size(), std::move(parents), std::move(back));
        }
        return t;
    }
};

namespace {
Tensor finish(Tape* tape, Shape shape, std::vector<double> data,
              std::vector<int> parents, Tape::BackFn back) {
    return OpRecorder::make(tape, std::move(shape),
                            std::make_shared<const std::vector<double>>(std::move(data)),
                            std::move(parents), std::move(back));
}
} // namespace

int Tape::record(int64_t count, std::vector<int> parents, BackFn back) {
    nodes_.push_back(Node{count, std::move(parents), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
    return OpRecorder::make(this, std::move(shape),
                            std::make_shared<const std::vector<double>>(std::move(values)),
                            {}, nullptr);
}

Tensor Tape::leaf(const Tensor& constant) {
    std::vector<double> v(constant.data().begin(), constant.data().end());
    return leaf(constant.shape(), std::move(v));
}

Gradients Tape::backward(const Tensor& loss) const {
    Gradients g;
    if (!loss.requires_grad()) return g; // constant graph: empty map
    if (loss.tape() != this) throw Error("backward: loss recorded on a different tape");
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));

    g.tape_ = this;
    g.bufs_.resize(nodes_.size());
    g.bufs_[loss.node()] = {1.0};
    for (int i = loss.node(); i >= 0; --i) {
        if (g.bufs_[i].empty() || !nodes_[i].back) continue;
        nodes_[i].back(g.bufs_[i].data(), g);
    }
    return g;
}

double* Gradients::accumulator(int node, int64_t n) {
    auto& buf = bufs_[node];
    if (buf.empty()) buf.assign(static_cast<size_t>(n), 0.0);
    return buf.data();
}

Tensor Gradients::grad(const Tensor& t) const {
    if (empty()) throw Error("grad: empty gradient map");
    if (!t.requires_grad() || t.tape() != tape_)
        throw Error("grad: tensor is not recorded on this tape");
    const auto& buf = bufs_[t.node()];
    if (buf.empty()) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), buf);
}

Gradients backward(const Tensor& loss) {
    if (!loss.requires_grad()) return Gradients{};
    return loss.tape()->backward(loss);
}

// ---- elementwise ------------------------------------------------------

namespace {

// y = f(a,b) elementwise; backward scales gout by per-element factors.
Tensor binary_pointwise(const char* op, const Tensor& a, const Tensor& b,
                        double (*f)(double, double),
                        double (*dfa)(double, double),
                        double (*dfb)(double, double)) {
    check_same_shape(op, a, b);
    Tape* tape = common_tape(a, b, op);
    const int64_t n = a.size();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for_each_index(n, [&](int64_t i) { out[i] = f(pa[i], pb[i]); });

    Tape::BackFn back;
    if (tape) {
        auto ca = a, cb = b; // keep operand data alive
        back = [ca, cb, n, dfa, dfb](const double* g, Gradients& grads) {
            const double* pa = ca.data().data();
            const double* pb = cb.data().data();
            if (ca.requires_grad()) {
                double* da = grads.accumulator(ca.node(), n);
                for (int64_t i = 0; i < n; ++i) da[i] += g[i] * dfa(pa[i], pb[i]);
            }
            if (cb.requires_grad()) {
                double* db = grads.accumulator(cb.node(), n);
                for (int64_t i = 0; i < n; ++i) db[i] += g[i] * dfb(pa[i], pb[i]);
            }
        };
    }
    std::vector<int> parents;
    if (a.requires_grad()) parents.push_back(a.node());
    if (b.requires_grad()) parents.push_back(b.node());
    return finish(tape, a.shape(), std::move(out), std::move(parents), std::move(back));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_pointwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_pointwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_pointwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor squared_difference(const Tensor& a, const Tensor& b) {
    return binary_pointwise(
        "squared_difference", a, b,
        [](double x, double y) { return (x - y) * (x - y); },
        [](double x, double y) { return 2.0 * (x - y); },
        [](double x, double y) { return -2.0 * (x - y); });
}

namespace {

Tensor unary_pointwise(const Tensor& x, double (*f)(double, double),
                       double (*df)(double x, double y, double p), double p) {
    Tape* tape = x.tape();
    const int64_t n = x.size();
    std::vector<double> out(static_cast<size_t>(n));
    const double* px = x.data().data();
    for_each_index(n, [&](int64_t i) { out[i] = f(px[i], p); });

    Tape::BackFn back;
    auto shared_out = std::make_shared<const std::vector<double>>(std::move(out));
    if (tape) {
        auto cx = x;
        back = [cx, shared_out, n, df, p](const double* g, Gradients& grads) {
            const double* px = cx.data().data();
            const double* py = shared_out->data();
            double* dx = grads.accumulator(cx.node(), n);
            for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * df(px[i], py[i], p);
        };
    }
    return OpRecorder::make(tape, x.shape(), shared_out,
                            x.requires_grad() ? std::vector<int>{x.node()} : std::vector<int>{},
                            std::move(back));
}

} // namespace

Tensor tanh(const Tensor& x) {
    return unary_pointwise(
        x, [](double v, double) { return std::tanh(v); },
        [](double, double y, double) { return 1.0 - y * y; }, 0.0);
}

Tensor sigmoid(const Tensor& x) {
    return unary_pointwise(
        x,
        [](double v, double) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y, double) { return y * (1.0 - y); }, 0.0);
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
    return unary_pointwise(
        x, [](double v, double s) { return v > 0.0 ? v : s * v; },
        [](double v, double, double s) { return v > 0.0 ? 1.0 : s; }, negative_slope);
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_pointwise(
        a, [](double v, double c) { return v + c; },
        [](double, double, double) { return 1.0; }, s);
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_pointwise(
        a, [](double v, double c) { return v * c; },
        [](double, double, double c) { return c; }, s);
}

// ---- matrix / bias ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tape* tape = common_tape(a, b, "matmul");
    const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(static_cast<size_t>(m * n));
    kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);

    Tape::BackFn back;
    if (tape) {
        auto ca = a, cb = b;
        back = [ca, cb, m, k, n](const double* g, Gradients& grads) {
            if (ca.requires_grad()) {
                double* da = grads.accumulator(ca.node(), m * k);
                kernels::matmul_nt(g, cb.data().data(), da, m, n, k, /*acc=*/true);
            }
            if (cb.requires_grad()) {
                double* db = grads.accumulator(cb.node(), k * n);
                kernels::matmul_tn(ca.data().data(), g, db, k, m, n, /*acc=*/true);
            }
        };
    }
    std::vector<int> parents;
    if (a.requires_grad()) parents.push_back(a.node());
    if (b.requires_grad()) parents.push_back(b.node());
    return finish(tape, {m, n}, std::move(out), std::move(parents), std::move(back));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.shape().size() != 2 || bias.shape().size() != 1 || x.shape()[1] != bias.shape()[0])
        throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(bias.shape()));
    Tape* tape = common_tape(x, bias, "add_bias");
    const int64_t m = x.shape()[0], n = x.shape()[1];
    std::vector<double> out(static_cast<size_t>(m * n));
    const double* px = x.data().data();
    const double* pb = bias.data().data();
    for_each_index(m * n, [&](int64_t i) { out[i] = px[i] + pb[i % n]; });

    Tape::BackFn back;
    if (tape) {
        auto cx = x, cb = bias;
        back = [cx, cb, m, n](const double* g, Gradients& grads) {
            if (cx.requires_grad()) {
                double* dx = grads.accumulator(cx.node(), m * n);
                for (int64_t i = 0; i < m * n; ++i) dx[i] += g[i];
            }
            if (cb.requires_grad()) {
                double* db = grads.accumulator(cb.node(), n);
                kernels::colsum_acc(g, db, m, n);
            }
        };
    }
    std::vector<int> parents;
    if (x.requires_grad()) parents.push_back(x.node());
    if (bias.requires_grad()) parents.push_back(bias.node());
    return finish(tape, x.shape(), std::move(out), std::move(parents), std::move(back));
}

// ---- structure ops ----------------------------------------------------

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = xs[0].shape();
    if (axis < 0 || axis >= static_cast<int>(ref.size()))
        throw ShapeError("concat: axis out of range for " + shape_str(ref));
    Tape* tape = nullptr;
    int64_t axis_total = 0;
    for (const auto& x : xs) {
        if (x.shape().size() != ref.size())
            throw ShapeError("concat: rank mismatch " + shape_str(ref) + " vs " +
                             shape_str(x.shape()));
        for (size_t d = 0; d < ref.size(); ++d)
            if (static_cast<int>(d) != axis && x.shape()[d] != ref[d])
                throw ShapeError("concat: shape mismatch " + shape_str(ref) + " vs " +
                                 shape_str(x.shape()));
        axis_total += x.shape()[axis];
        Tape* t = x.tape();
        if (t) {
            if (tape && tape != t) throw Error("concat: operands recorded on different tapes");
            tape = t;
        }
    }
    Shape out_shape = ref;
    out_shape[axis] = axis_total;
    const AxisSplit sp = split_at(out_shape, axis);
    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    std::vector<int64_t> offsets; // axis offset of each input
    int64_t off = 0;
    for (const auto& x : xs) {
        offsets.push_back(off);
        const int64_t alen = x.shape()[axis];
        const double* px = x.data().data();
        for (int64_t o = 0; o < sp.outer; ++o) {
            double* dst = out.data() + (o * sp.axis + off) * sp.inner;
            const double* src = px + o * alen * sp.inner;
            std::copy(src, src + alen * sp.inner, dst);
        }
        off += alen;
    }

    Tape::BackFn back;
    std::vector<int> parents;
    if (tape) {
        std::vector<Tensor> cs = xs;
        std::vector<int64_t> lens;
        for (const auto& x : xs) lens.push_back(x.shape()[axis]);
        auto offs = offsets;
        auto spc = sp;
        back = [cs, offs, lens, spc](const double* g, Gradients& grads) {
            for (size_t idx = 0; idx < cs.size(); ++idx) {
                const Tensor& x = cs[idx];
                if (!x.requires_grad()) continue;
                const int64_t len = lens[idx];
                double* dx = grads.accumulator(x.node(), x.size());
                for (int64_t o = 0; o < spc.outer; ++o) {
                    const double* src = g + (o * spc.axis + offs[idx]) * spc.inner;
                    double* dst = dx + o * len * spc.inner;
                    for (int64_t i = 0; i < len * spc.inner; ++i) dst[i] += src[i];
                }
            }
        };
        for (const auto& x : xs)
            if (x.requires_grad()) parents.push_back(x.node());
    }
    return finish(tape, out_shape, std::move(out), std::move(parents), std::move(back));
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
    const Shape& s = x.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("slice: axis out of range for " + shape_str(s));
    if (len < 1 || start < 0 || start + len > s[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " + shape_str(s));
    const AxisSplit sp = split_at(s, axis);
    Shape out_shape = s;
    out_shape[axis] = len;
    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    const double* px = x.data().data();
    for (int64_t o = 0; o < sp.outer; ++o) {
        const double* src = px + (o * sp.axis + start) * sp.inner;
        std::copy(src, src + len * sp.inner, out.data() + o * len * sp.inner);
    }

    Tape* tape = x.tape();
    Tape::BackFn back;
    if (tape) {
        auto cx = x;
        auto spc = sp;
        back = [cx, spc, start, len](const double* g, Gradients& grads) {
            if (!cx.requires_grad()) return;
            double* dx = grads.accumulator(cx.node(), cx.size());
            for (int64_t o = 0; o < spc.outer; ++o) {
                double* dst = dx + (o * spc.axis + start) * spc.inner;
                const double* src = g + o * len * spc.inner;
                for (int64_t i = 0; i < len * spc.inner; ++i) dst[i] += src[i];
            }
        };
    }
    return finish(tape, out_shape, std::move(out),
                  x.requires_grad() ? std::vector<int>{x.node()} : std::vector<int>{},
                  std::move(back));
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    Tape* tape = x.tape();
    std::vector<double> out(x.data().begin(), x.data().end());
    Tape::BackFn back;
    if (tape) {
        auto cx = x;
        back = [cx](const double* g, Gradients& grads) {
            if (!cx.requires_grad()) return;
            double* dx = grads.accumulator(cx.node(), cx.size());
            for (int64_t i = 0; i < cx.size(); ++i) dx[i] += g[i];
        };
    }
    return finish(tape, std::move(shape), std::move(out),
                  x.requires_grad() ? std::vector<int>{x.node()} : std::vector<int>{},
                  std::move(back));
}

Tensor swap_last_axes(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("swap_last_axes: need rank >= 2, got " + shape_str(s));
    const int64_t a = s[s.size() - 2], b = s[s.size() - 1];
    int64_t outer = 1;
    for (size_t i = 0; i + 2 < s.size(); ++i) outer *= s[i];
    Shape out_shape = s;
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);

    auto transpose = [a, b, outer](const double* src, double* dst) {
        for (int64_t o = 0; o < outer; ++o) {
            const double* sp = src + o * a * b;
            double* dp = dst + o * a * b;
            for (int64_t i = 0; i < a; ++i)
                for (int64_t j = 0; j < b; ++j) dp[j * a + i] = sp[i * b + j];
        }
    };
    std::vector<double> out(static_cast<size_t>(x.size()));
    transpose(x.data().data(), out.data());

    Tape* tape = x.tape();
    Tape::BackFn back;
    if (tape) {
        auto cx = x;
        back = [cx, a, b, outer](const double* g, Gradients& grads) {
            if (!cx.requires_grad()) return;
            double* dx = grads.accumulator(cx.node(), cx.size());
            // transpose back, accumulating
            for (int64_t o = 0; o < outer; ++o) {
                const double* gp = g + o * a * b;
                double* dp = dx + o * a * b;
                for (int64_t j = 0; j < b; ++j)
                    for (int64_t i = 0; i < a; ++i) dp[i * b + j] += gp[j * a + i];
            }
        };
    }
    return finish(tape, out_shape, std::move(out),
                  x.requires_grad() ? std::vector<int>{x.node()} : std::vector<int>{},
                  std::move(back));
}

// ---- reductions --------------------------------------------------------

namespace {
Tensor reduce_all(const Tensor& x, bool take_mean) {
    const int64_t n = x.size();
    if (n == 0) throw ShapeError("sum/mean: empty tensor");
    double acc = 0.0;
    const double* px = x.data().data();
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    const double denom = take_mean ? static_cast<double>(n) : 1.0;
    Tape* tape = x.tape();
    Tape::BackFn back;
    if (tape) {
        auto cx = x;
        back = [cx, n, denom](const double* g, Gradients& grads) {
            if (!cx.requires_grad()) return;
            double* dx = grads.accumulator(cx.node(), n);
            const double gv = g[0] / denom;
            for (int64_t i = 0; i < n; ++i) dx[i] += gv;
        };
    }
    return finish(tape, {1}, {acc / denom},
                  x.requires_grad() ? std::vector<int>{x.node()} : std::vector<int>{},
                  std::move(back));
}
} // namespace

Tensor sum(const Tensor& x) { return reduce_all(x, false); }
Tensor mean(const Tensor& x) { return reduce_all(x, true); }

// ---- convolution -------------------------------------------------------

Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int64_t dilation) {
    if (x.shape().size() != 3 || w.shape().size() != 3)
        throw ShapeError("conv1d_causal: need x (B,Cin,L) and w (Cout,Cin,K), got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const int64_t b = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
    const int64_t cout = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != cin)
        throw ShapeError("conv1d_causal: channel mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(w.shape()));
    if (bias.shape() != Shape{cout})
        throw ShapeError("conv1d_causal: bias shape " + shape_str(bias.shape()) +
                         " does not match out channels " + std::to_string(cout));
    if (dilation < 1) throw ShapeError("conv1d_causal: dilation must be >= 1");
    if (dilation * (k - 1) >= len)
        throw ShapeError("conv1d_causal: dilation " + std::to_string(dilation) +
                         " with kernel " + std::to_string(k) +
                         " spans past sequence length " + std::to_string(len));

    Tape* tape = common_tape(x, w, "conv1d_causal");
    if (bias.tape()) {
        if (tape && bias.tape() != tape)
            throw Error("conv1d_causal: operands recorded on different tapes");
        tape = bias.tape();
    }
    std::vector<double> out(static_cast<size_t>(b * cout * len));
    kernels::conv1d_causal(x.data().data(), w.data().data(), bias.data().data(),
                           out.data(), b, cin, cout, len, k, dilation);

    Tape::BackFn back;
    if (tape) {
        auto cx = x, cw = w, cb = bias;
        back = [cx, cw, cb, b, cin, cout, len, k, dilation](const double* g, Gradients& grads) {
            if (cx.requires_grad()) {
                double* dx = grads.accumulator(cx.node(), cx.size());
                kernels::conv1d_causal_grad_x(g, cw.data().data(), dx, b, cin, cout, len, k,
                                              dilation);
            }
            if (cw.requires_grad()) {
                double* dw = grads.accumulator(cw.node(), cw.size());
                kernels::conv1d_causal_grad_w(g, cx.data().data(), dw, b, cin, cout, len, k,
                                              dilation);
            }
            if (cb.requires_grad()) {
                double* db = grads.accumulator(cb.node(), cb.size());
                kernels::conv1d_causal_grad_bias(g, db, b, cout, len);
            }
        };
    }
    std::vector<int> parents;
    for (const Tensor* t : {&x, &w, &bias})
        if (t->requires_grad()) parents.push_back(t->node());
    return finish(tape, {b, cout, len}, std::move(out), std::move(parents), std::move(back));
}

// ---- batch norm ---------------------------------------------------------

Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormState& state, BatchNormMode mode) {
    const Shape& s = x.shape();
    if (s.size() != 2 && s.size() != 3)
        throw ShapeError("batch_norm_1d: need (B,C) or (B,C,L), got " + shape_str(s));
    const int64_t nb = s[0], c = s[1], l = s.size() == 3 ? s[2] : 1;
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw ShapeError("batch_norm_1d: gamma/beta " + shape_str(gamma.shape()) +
                         " do not match channels " + std::to_string(c));
    const int64_t r = nb * l; // reduction count per channel

    std::vector<double> use_mean(static_cast<size_t>(c)), use_var(static_cast<size_t>(c));
    const double* px = x.data().data();
    switch (mode) {
    case BatchNormMode::Train: {
        if (r < 2) throw ShapeError("batch_norm_1d: training needs more than one sample");
        for (int64_t ch = 0; ch < c; ++ch) {
            double m = 0.0;
            for (int64_t bi = 0; bi < nb; ++bi)
                for (int64_t t = 0; t < l; ++t) m += px[(bi * c + ch) * l + t];
            m /= static_cast<double>(r);
            double v = 0.0;
            for (int64_t bi = 0; bi < nb; ++bi)
                for (int64_t t = 0; t < l; ++t) {
                    const double d = px[(bi * c + ch) * l + t] - m;
                    v += d * d;
                }
            v /= static_cast<double>(r);
            use_mean[ch] = m;
            use_var[ch] = v;
        }
        if (state.running_mean && state.running_var) {
            auto& rm = *state.running_mean;
            auto& rv = *state.running_var;
            const double unbias = static_cast<double>(r) / static_cast<double>(r - 1);
            for (int64_t ch = 0; ch < c; ++ch) {
                rm[ch] = (1.0 - state.momentum) * rm[ch] + state.momentum * use_mean[ch];
                rv[ch] = (1.0 - state.momentum) * rv[ch] + state.momentum * use_var[ch] * unbias;
            }
        }
        state.cache_mean = use_mean;
        state.cache_var = use_var;
        break;
    }
    case BatchNormMode::FrozenBatch:
        if (state.cache_mean.size() != static_cast<size_t>(c))
            throw Error("batch_norm_1d: no cached batch statistics to freeze");
        use_mean = state.cache_mean;
        use_var = state.cache_var;
        break;
    case BatchNormMode::Eval:
        if (!state.running_mean || !state.running_var ||
            state.running_mean->size() != static_cast<size_t>(c))
            throw Error("batch_norm_1d: running statistics unavailable");
        use_mean = *state.running_mean;
        use_var = *state.running_var;
        break;
    }

    std::vector<double> istd(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) istd[ch] = 1.0 / std::sqrt(use_var[ch] + state.eps);

    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.size()));
    std::vector<double> out(static_cast<size_t>(x.size()));
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    for (int64_t bi = 0; bi < nb; ++bi)
        for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t base = (bi * c + ch) * l;
            for (int64_t t = 0; t < l; ++t) {
                const double xh = (px[base + t] - use_mean[ch]) * istd[ch];
                (*xhat)[base + t] = xh;
                out[base + t] = pg[ch] * xh + pb[ch];
            }
        }

    Tape* tape = common_tape(x, gamma, "batch_norm_1d");
    if (beta.tape()) {
        if (tape && beta.tape() != tape)
            throw Error("batch_norm_1d: operands recorded on different tapes");
        tape = beta.tape();
    }
    Tape::BackFn back;
    if (tape) {
        auto cx = x, cg = gamma, cb = beta;
        const bool batch_stats = mode == BatchNormMode::Train;
        back = [cx, cg, cb, xhat, istd, nb, c, l, r, batch_stats](const double* g,
                                                                  Gradients& grads) {
            const double* pg = cg.data().data();
            for (int64_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int64_t bi = 0; bi < nb; ++bi) {
                    const int64_t base = (bi * c + ch) * l;
                    for (int64_t t = 0; t < l; ++t) {
                        sum_g += g[base + t];
                        sum_gx += g[base + t] * (*xhat)[base + t];
                    }
                }
                if (cg.requires_grad()) grads.accumulator(cg.node(), c)[ch] += sum_gx;
                if (cb.requires_grad()) grads.accumulator(cb.node(), c)[ch] += sum_g;
                if (cx.requires_grad()) {
                    double* dx = grads.accumulator(cx.node(), cx.size());
                    const double gi = pg[ch] * istd[ch];
                    for (int64_t bi = 0; bi < nb; ++bi) {
                        const int64_t base = (bi * c + ch) * l;
                        for (int64_t t = 0; t < l; ++t) {
                            if (batch_stats) {
                                // full backward through batch mean and variance
                                dx[base + t] += gi * (g[base + t] - sum_g / r -
                                                      (*xhat)[base + t] * sum_gx / r);
                            } else {
                                dx[base + t] += gi * g[base + t];
                            }
                        }
                    }
                }
            }
        };
    }
    std::vector<int> parents;
    for (const Tensor* t : {&x, &gamma, &beta})
        if (t->requires_grad()) parents.push_back(t->node());
    return finish(tape, s, std::move(out), std::move(parents), std::move(back));
}

// ---- quaternion rows ----------------------------------------------------

Tensor rows_normalize(const Tensor& x, double eps) {
    const Shape& s = x.shape();
    if (s.size() != 2) throw ShapeError("rows_normalize: need rank 2, got " + shape_str(s));
    const int64_t m = s[0], n = s[1];
    const double* px = x.data().data();
    std::vector<double> out(static_cast<size_t>(m * n));
    auto denom = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    auto clamped = std::make_shared<std::vector<char>>(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        double nrm = 0.0;
        for (int64_t j = 0; j < n; ++j) nrm += px[i * n + j] * px[i * n + j];
        nrm = std::sqrt(nrm);
        const bool clamp = nrm < eps;
        const double d = clamp ? eps : nrm;
        (*denom)[i] = d;
        (*clamped)[i] = clamp ? 1 : 0;
        for (int64_t j = 0; j < n; ++j) out[i * n + j] = px[i * n + j] / d;
    }

    Tape* tape = x.tape();
    Tape::BackFn back;
    auto shared_out = std::make_shared<const std::vector<double>>(std::move(out));
    if (tape) {
        auto cx = x;
        back = [cx, shared_out, denom, clamped, m, n](const double* g, Gradients& grads) {
            if (!cx.requires_grad()) return;
            double* dx = grads.accumulator(cx.node(), m * n);
            const double* py = shared_out->data();
            for (int64_t i = 0; i < m; ++i) {
                if ((*clamped)[i]) {
                    for (int64_t j = 0; j < n; ++j) dx[i * n + j] += g[i * n + j] / (*denom)[i];
                    continue;
                }
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) dot += g[i * n + j] * py[i * n + j];
                for (int64_t j = 0; j < n; ++j)
                    dx[i * n + j] += (g[i * n + j] - py[i * n + j] * dot) / (*denom)[i];
            }
        };
    }
    return OpRecorder::make(tape, s, shared_out,
                            x.requires_grad() ? std::vector<int>{x.node()} : std::vector<int>{},
                            std::move(back));
}

Tensor quat_mul_rows(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || a.shape()[1] != 4)
        throw ShapeError("quat_mul_rows: need (B,4), got " + shape_str(a.shape()));
    check_same_shape("quat_mul_rows", a, b);
    Tape* tape = common_tape(a, b, "quat_mul_rows");
    const int64_t m = a.shape()[0];
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    std::vector<double> out(static_cast<size_t>(m * 4));
    for (int64_t i = 0; i < m; ++i) {
        const double aw = pa[i * 4], ax = pa[i * 4 + 1], ay = pa[i * 4 + 2], az = pa[i * 4 + 3];
        const double bw = pb[i * 4], bx = pb[i * 4 + 1], by = pb[i * 4 + 2], bz = pb[i * 4 + 3];
        out[i * 4 + 0] = aw * bw - ax * bx - ay * by - az * bz;
        out[i * 4 + 1] = aw * bx + ax * bw + ay * bz - az * by;
        out[i * 4 + 2] = aw * by - ax * bz + ay * bw + az * bx;
        out[i * 4 + 3] = aw * bz + ax * by - ay * bx + az * bw;
    }

    Tape::BackFn back;
    if (tape) {
        auto ca = a, cb = b;
        back = [ca, cb, m](const double* g, Gradients& grads) {
            const double* pa = ca.data().data();
            const double* pb = cb.data().data();
            for (int64_t i = 0; i < m; ++i) {
                const double gw = g[i * 4], gx = g[i * 4 + 1], gy = g[i * 4 + 2],
                             gz = g[i * 4 + 3];
                if (ca.requires_grad()) {
                    // da = R(b)^T g, where c = R(b) a
                    const double bw = pb[i * 4], bx = pb[i * 4 + 1], by = pb[i * 4 + 2],
                                 bz = pb[i * 4 + 3];
                    double* da = grads.accumulator(ca.node(), m * 4);
                    da[i * 4 + 0] += bw * gw + bx * gx + by * gy + bz * gz;
                    da[i * 4 + 1] += -bx * gw + bw * gx - bz * gy + by * gz;
                    da[i * 4 + 2] += -by * gw + bz * gx + bw * gy - bx * gz;
                    da[i * 4 + 3] += -bz * gw - by * gx + bx * gy + bw * gz;
                }
                if (cb.requires_grad()) {
                    // db = L(a)^T g, where c = L(a) b
                    const double aw = pa[i * 4], ax = pa[i * 4 + 1], ay = pa[i * 4 + 2],
                                 az = pa[i * 4 + 3];
                    double* db = grads.accumulator(cb.node(), m * 4);
                    db[i * 4 + 0] += aw * gw + ax * gx + ay * gy + az * gz;
                    db[i * 4 + 1] += -ax * gw + aw * gx + az * gy - ay * gz;
                    db[i * 4 + 2] += -ay * gw - az * gx + aw * gy + ax * gz;
                    db[i * 4 + 3] += -az * gw + ay * gx - ax * gy + aw * gz;
                }
            }
        };
    }
    std::vector<int> parents;
    if (a.requires_grad()) parents.push_back(a.node());
    if (b.requires_grad()) parents.push_back(b.node());
    return finish(tape, a.shape(), std::move(out), std::move(parents), std::move(back));
}

Tensor scale_rows(const Tensor& x, std::vector<double> s) {
    const Shape& sh = x.shape();
    if (sh.size() != 2 || sh[0] != static_cast<int64_t>(s.size()))
        throw ShapeError("scale_rows: scales (" + std::to_string(s.size()) +
                         ") do not match rows of " + shape_str(sh));
    const int64_t m = sh[0], n = sh[1];
    const double* px = x.data().data();
    std::vector<double> out(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[i * n + j] = px[i * n + j] * s[i];

    Tape* tape = x.tape();
    Tape::BackFn back;
    if (tape) {
        auto cx = x;
        auto scales = std::make_shared<std::vector<double>>(std::move(s));
        back = [cx, scales, m, n](const double* g, Gradients& grads) {
            if (!cx.requires_grad()) return;
            double* dx = grads.accumulator(cx.node(), m * n);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) dx[i * n + j] += g[i * n + j] * (*scales)[i];
        };
    }
    return finish(tape, sh, std::move(out),
                  x.requires_grad() ? std::vector<int>{x.node()} : std::vector<int>{},
                  std::move(back));
}

} // namespace qdyn::ad
