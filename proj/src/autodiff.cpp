#include "gkd/autodiff.hpp"

#include <algorithm>
#include <stdexcept>

namespace gkd {

const Tensor& Var::value() const
{
    if (!tape_) throw std::logic_error("detached variable");
    return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

Var Tape::leaf(Tensor value, bool requires_grad)
{
    value.check_finite("leaf");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op_name)
{
    value.check_finite(op_name);
    Node n;
    n.value = std::move(value);
    n.op = op_name;
    for (const Var& in : inputs) {
        if (in.tape() != this) throw std::logic_error(std::string(op_name) + ": operand belongs to a different tape");
        n.inputs.push_back(in.id());
        n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in.id())].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tape::Node& Tape::node(Var v) const
{
    if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size())
        throw std::logic_error("variable is not on this tape");
    return nodes_[static_cast<std::size_t>(v.id())];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Vector Tape::grad(Var v) const
{
    const Node& n = node(v);
    if (!backward_done_) throw std::logic_error("gradient requested before backward()");
    if (n.grad.size() == 0) return Vector::Zero(n.value.size());
    return n.grad;
}

void Tape::backward(Var loss)
{
    if (!loss.valid()) throw std::logic_error("backward on a detached variable");
    const Node& root = node(loss);
    if (root.value.size() != 1) throw std::invalid_argument("backward requires a scalar loss, got " + shape_string(root.value.shape()));
    if (backward_done_) throw std::logic_error("backward already ran on this tape; call reset_grads() first");
    backward_done_ = true;

    for (auto& n : nodes_) n.grad.resize(0);
    auto& r = nodes_[static_cast<std::size_t>(loss.id())];
    if (!r.requires_grad) return;
    r.grad = Vector::Ones(1);

    for (std::size_t k = static_cast<std::size_t>(loss.id()) + 1; k-- > 0;) {
        Node& n = nodes_[k];
        if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
        GradContext ctx{n.grad, n.value, {}, {}};
        ctx.inputs.reserve(n.inputs.size());
        ctx.input_grads.reserve(n.inputs.size());
        for (int id : n.inputs) {
            Node& in = nodes_[static_cast<std::size_t>(id)];
            ctx.inputs.push_back(&in.value);
            if (in.requires_grad) {
                if (in.grad.size() == 0) in.grad = Vector::Zero(in.value.size());
                ctx.input_grads.push_back(&in.grad);
            } else {
                ctx.input_grads.push_back(nullptr);
            }
        }
        n.backward(ctx);
    }
}

void Tape::reset_grads()
{
    for (auto& n : nodes_) n.grad.resize(0);
    backward_done_ = false;
}

namespace {

Tape& tape_of(Var a)
{
    if (!a.valid()) throw std::logic_error("operation on a detached variable");
    return *a.tape();
}

void require_same_size(const Var& a, const Var& b, const char* op)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
}

} // namespace

Var add(Var a, Var b)
{
    require_same_size(a, b, "add");
    Tensor out(a.shape(), a.value().data() + b.value().data());
    return tape_of(a).record(std::move(out), {a, b}, [](const GradContext& c) {
        if (c.input_grads[0]) *c.input_grads[0] += c.out_grad;
        if (c.input_grads[1]) *c.input_grads[1] += c.out_grad;
    }, "add");
}

Var sub(Var a, Var b)
{
    require_same_size(a, b, "sub");
    Tensor out(a.shape(), a.value().data() - b.value().data());
    return tape_of(a).record(std::move(out), {a, b}, [](const GradContext& c) {
        if (c.input_grads[0]) *c.input_grads[0] += c.out_grad;
        if (c.input_grads[1]) *c.input_grads[1] -= c.out_grad;
    }, "sub");
}

Var mul(Var a, Var b)
{
    require_same_size(a, b, "mul");
    Tensor out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
    return tape_of(a).record(std::move(out), {a, b}, [](const GradContext& c) {
        if (c.input_grads[0]) *c.input_grads[0] += c.out_grad.cwiseProduct(c.inputs[1]->data());
        if (c.input_grads[1]) *c.input_grads[1] += c.out_grad.cwiseProduct(c.inputs[0]->data());
    }, "mul");
}

Var scale(Var a, Scalar s)
{
    Tensor out(a.shape(), a.value().data() * s);
    return tape_of(a).record(std::move(out), {a}, [s](const GradContext& c) {
        *c.input_grads[0] += s * c.out_grad;
    }, "scale");
}

Var add_scalar(Var a, Scalar s)
{
    Tensor out(a.shape(), (a.value().data().array() + s).matrix());
    return tape_of(a).record(std::move(out), {a}, [](const GradContext& c) {
        *c.input_grads[0] += c.out_grad;
    }, "add_scalar");
}

Var sum(Var a)
{
    Tensor out({1}, Vector::Constant(1, a.value().data().sum()));
    return tape_of(a).record(std::move(out), {a}, [](const GradContext& c) {
        c.input_grads[0]->array() += c.out_grad[0];
    }, "sum");
}

Var mean(Var a)
{
    const auto n = static_cast<Scalar>(a.size());
    Tensor out({1}, Vector::Constant(1, a.value().data().sum() / n));
    return tape_of(a).record(std::move(out), {a}, [n](const GradContext& c) {
        c.input_grads[0]->array() += c.out_grad[0] / n;
    }, "mean");
}

Var relu(Var a)
{
    Tensor out(a.shape(), a.value().data().cwiseMax(0.0));
    return tape_of(a).record(std::move(out), {a}, [](const GradContext& c) {
        const Vector& x = c.inputs[0]->data();
        *c.input_grads[0] += (x.array() > 0.0).select(c.out_grad, 0.0);
    }, "relu");
}

Var sum_rows(Var a)
{
    const Index rows = a.shape().front();
    const Index cols = a.size() / rows;
    Tensor out({rows, 1});
    out.data() = a.value().matrix(rows, cols).rowwise().sum();
    return tape_of(a).record(std::move(out), {a}, [rows, cols](const GradContext& c) {
        Eigen::Map<RowMatrix> g(c.input_grads[0]->data(), rows, cols);
        g.colwise() += c.out_grad;
    }, "sum_rows");
}

Var weighted_sum(std::span<const Var> xs, std::span<const Scalar> weights)
{
    if (xs.empty() || xs.size() != weights.size()) throw std::invalid_argument("weighted_sum: operand/weight count mismatch");
    Tensor out(xs.front().shape());
    std::vector<Var> inputs(xs.begin(), xs.end());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        require_same_size(xs[i], xs.front(), "weighted_sum");
        out.data() += weights[i] * xs[i].value().data();
    }
    std::vector<Scalar> w(weights.begin(), weights.end());
    return tape_of(xs.front()).record(std::move(out), std::move(inputs), [w](const GradContext& c) {
        for (std::size_t i = 0; i < w.size(); ++i)
            if (c.input_grads[i]) *c.input_grads[i] += w[i] * c.out_grad;
    }, "weighted_sum");
}

Var reshape(Var a, Shape shape)
{
    if (shape_size(shape) != a.size()) throw std::invalid_argument("reshape: size mismatch to " + shape_string(shape));
    Tensor out(std::move(shape), a.value().data());
    return tape_of(a).record(std::move(out), {a}, [](const GradContext& c) {
        *c.input_grads[0] += c.out_grad;
    }, "reshape");
}

Var concat_cols(std::span<const Var> parts)
{
    if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
    const Index rows = parts.front().shape().front();
    std::vector<Index> widths;
    Index total = 0;
    for (const Var& p : parts) {
        if (p.shape().front() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
        widths.push_back(p.size() / rows);
        total += widths.back();
    }
    Tensor out({rows, total});
    auto m = out.matrix(rows, total);
    Index off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        m.middleCols(off, widths[i]) = parts[i].value().matrix(rows, widths[i]);
        off += widths[i];
    }
    return tape_of(parts.front()).record(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                                         [rows, total, widths](const GradContext& c) {
        Eigen::Map<const RowMatrix> g(c.out_grad.data(), rows, total);
        Index o = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (c.input_grads[i]) {
                Eigen::Map<RowMatrix> gi(c.input_grads[i]->data(), rows, widths[i]);
                gi += g.middleCols(o, widths[i]);
            }
            o += widths[i];
        }
    }, "concat_cols");
}

Var slice_rows(Var a, Index begin, Index count)
{
    const Index rows = a.shape().front();
    if (begin < 0 || count <= 0 || begin + count > rows) throw std::out_of_range("slice_rows: range outside leading dimension");
    const Index stride = a.size() / rows;
    Shape shape = a.shape();
    shape.front() = count;
    Tensor out(shape, a.value().data().segment(begin * stride, count * stride));
    return tape_of(a).record(std::move(out), {a}, [begin, count, stride](const GradContext& c) {
        c.input_grads[0]->segment(begin * stride, count * stride) += c.out_grad;
    }, "slice_rows");
}

Var transpose(Var a)
{
    if (a.shape().size() != 2) throw std::invalid_argument("transpose expects a matrix");
    const Index r = a.shape()[0], k = a.shape()[1];
    Tensor out({k, r});
    out.matrix(k, r) = a.value().matrix(r, k).transpose();
    return tape_of(a).record(std::move(out), {a}, [r, k](const GradContext& c) {
        Eigen::Map<RowMatrix>(c.input_grads[0]->data(), r, k) += Eigen::Map<const RowMatrix>(c.out_grad.data(), k, r).transpose();
    }, "transpose");
}

Var matmul(Var a, Var b)
{
    if (a.shape().size() != 2 || b.shape().size() != 2) throw std::invalid_argument("matmul expects matrices");
    const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        throw std::invalid_argument("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    Tensor out({m, n});
    out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
    return tape_of(a).record(std::move(out), {a, b}, [m, k, n](const GradContext& c) {
        Eigen::Map<const RowMatrix> g(c.out_grad.data(), m, n);
        if (c.input_grads[0])
            Eigen::Map<RowMatrix>(c.input_grads[0]->data(), m, k).noalias() += g * c.inputs[1]->matrix(k, n).transpose();
        if (c.input_grads[1])
            Eigen::Map<RowMatrix>(c.input_grads[1]->data(), k, n).noalias() += c.inputs[0]->matrix(m, k).transpose() * g;
    }, "matmul");
}

Var linear(Var x, Var w, Var b)
{
    const Index n = x.shape().front();
    const Index in = x.size() / n;
    if (w.shape().size() != 2 || w.shape()[1] != in)
        throw std::invalid_argument("linear: weight " + shape_string(w.shape()) + " does not accept input width " + std::to_string(in));
    const Index outw = w.shape()[0];
    if (b.valid() && b.size() != outw) throw std::invalid_argument("linear: bias length mismatch");
    Tensor out({n, outw});
    auto o = out.matrix(n, outw);
    o.noalias() = x.value().matrix(n, in) * w.value().matrix(outw, in).transpose();
    std::vector<Var> inputs{x, w};
    if (b.valid()) {
        o.rowwise() += b.value().data().transpose();
        inputs.push_back(b);
    }
    return tape_of(x).record(std::move(out), std::move(inputs), [n, in, outw](const GradContext& c) {
        Eigen::Map<const RowMatrix> g(c.out_grad.data(), n, outw);
        if (c.input_grads[0])
            Eigen::Map<RowMatrix>(c.input_grads[0]->data(), n, in).noalias() += g * c.inputs[1]->matrix(outw, in);
        if (c.input_grads[1])
            Eigen::Map<RowMatrix>(c.input_grads[1]->data(), outw, in).noalias() += g.transpose() * c.inputs[0]->matrix(n, in);
        if (c.input_grads.size() > 2 && c.input_grads[2]) *c.input_grads[2] += g.colwise().sum().transpose();
    }, "linear");
}

namespace {

struct ConvGeometry {
    Index n, cin, h, w, cout, kh, kw, ho, wo, stride, pad;
    Index patch() const { return cin * kh * kw; }
    Index out_pixels() const { return ho * wo; }
};

/// Writes sample columns into a [patch, ld] row-major block starting at `dst`.
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* dst, Index ld)
{
    for (Index c = 0; c < g.cin; ++c)
        for (Index i = 0; i < g.kh; ++i)
            for (Index j = 0; j < g.kw; ++j) {
                Scalar* row = dst + ((c * g.kh + i) * g.kw + j) * ld;
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.stride + i - g.pad;
                    Scalar* r = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(r, r + g.wo, 0.0);
                        continue;
                    }
                    const Scalar* src = x + (c * g.h + iy) * g.w;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.stride + j - g.pad;
                        r[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                    }
                }
            }
}

void col2im_add(const Scalar* cols, Index ld, const ConvGeometry& g, Scalar* dx)
{
    for (Index c = 0; c < g.cin; ++c)
        for (Index i = 0; i < g.kh; ++i)
            for (Index j = 0; j < g.kw; ++j) {
                const Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * ld;
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.stride + i - g.pad;
                    if (iy < 0 || iy >= g.h) continue;
                    Scalar* d = dx + (c * g.h + iy) * g.w;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.stride + j - g.pad;
                        if (ix >= 0 && ix < g.w) d[ix] += row[oy * g.wo + ox];
                    }
                }
            }
}

} // namespace

Var conv2d(Var x, Var w, Var b, Conv2dOptions opt)
{
    if (x.shape().size() != 4 || w.shape().size() != 4) throw std::invalid_argument("conv2d expects [N,C,H,W] input and [O,C,kh,kw] kernel");
    if (opt.stride < 1 || opt.padding < 0) throw std::invalid_argument("conv2d: invalid stride/padding");
    ConvGeometry g{};
    g.n = x.shape()[0];
    g.cin = x.shape()[1];
    g.h = x.shape()[2];
    g.w = x.shape()[3];
    g.cout = w.shape()[0];
    g.kh = w.shape()[2];
    g.kw = w.shape()[3];
    g.stride = opt.stride;
    g.pad = opt.padding;
    if (w.shape()[1] != g.cin)
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(w.shape()[1]) + " input channels, got " + std::to_string(g.cin));
    const Index span_h = g.h + 2 * g.pad - g.kh;
    const Index span_w = g.w + 2 * g.pad - g.kw;
    if (span_h < 0 || span_w < 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
    g.ho = span_h / g.stride + 1;
    g.wo = span_w / g.stride + 1;
    if (b.valid() && b.size() != g.cout) throw std::invalid_argument("conv2d: bias length mismatch");

    Tensor out({g.n, g.cout, g.ho, g.wo});
    const auto wm = w.value().matrix(g.cout, g.patch());
    const Index p = g.out_pixels();
    const Index in_stride = g.cin * g.h * g.w;
    const Index out_stride = g.cout * p;
    // Per-sample GEMMs keep the column buffer cache resident.
    RowMatrix cols(g.patch(), p);
    for (Index s = 0; s < g.n; ++s) {
        im2col(x.value().data().data() + s * in_stride, g, cols.data(), p);
        Eigen::Map<RowMatrix> o(out.data().data() + s * out_stride, g.cout, p);
        o.noalias() = wm * cols;
        if (b.valid()) o.colwise() += b.value().data();
    }
    std::vector<Var> inputs{x, w};
    if (b.valid()) inputs.push_back(b);
    return tape_of(x).record(std::move(out), std::move(inputs), [g, p, in_stride, out_stride](const GradContext& c) {
        const auto wm = c.inputs[1]->matrix(g.cout, g.patch());
        RowMatrix cols(g.patch(), p), dcols(g.patch(), p);
        for (Index s = 0; s < g.n; ++s) {
            Eigen::Map<const RowMatrix> go(c.out_grad.data() + s * out_stride, g.cout, p);
            if (c.input_grads[1]) {
                im2col(c.inputs[0]->data().data() + s * in_stride, g, cols.data(), p);
                Eigen::Map<RowMatrix>(c.input_grads[1]->data(), g.cout, g.patch()).noalias() += go * cols.transpose();
            }
            if (c.input_grads[0]) {
                dcols.noalias() = wm.transpose() * go;
                col2im_add(dcols.data(), p, g, c.input_grads[0]->data() + s * in_stride);
            }
            if (c.input_grads.size() > 2 && c.input_grads[2]) *c.input_grads[2] += go.rowwise().sum();
        }
    }, "conv2d");
}

Var avg_pool2(Var x)
{
    if (x.shape().size() != 4) throw std::invalid_argument("avg_pool2 expects [N,C,H,W]");
    const Index planes = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: spatial dims must be even");
    const Index ho = h / 2, wo = w / 2;
    Tensor out({x.shape()[0], x.shape()[1], ho, wo});
    const Scalar* in = x.value().data().data();
    Scalar* o = out.data().data();
    for (Index p = 0; p < planes; ++p)
        for (Index y = 0; y < ho; ++y)
            for (Index xx = 0; xx < wo; ++xx) {
                const Scalar* r0 = in + (p * h + 2 * y) * w + 2 * xx;
                o[(p * ho + y) * wo + xx] = 0.25 * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
            }
    return tape_of(x).record(std::move(out), {x}, [planes, h, w, ho, wo](const GradContext& c) {
        Scalar* gi = c.input_grads[0]->data();
        const Scalar* go = c.out_grad.data();
        for (Index p = 0; p < planes; ++p)
            for (Index y = 0; y < ho; ++y)
                for (Index xx = 0; xx < wo; ++xx) {
                    const Scalar v = 0.25 * go[(p * ho + y) * wo + xx];
                    Scalar* r0 = gi + (p * h + 2 * y) * w + 2 * xx;
                    r0[0] += v;
                    r0[1] += v;
                    r0[w] += v;
                    r0[w + 1] += v;
                }
    }, "avg_pool2");
}

Var upsample2(Var x)
{
    if (x.shape().size() != 4) throw std::invalid_argument("upsample2 expects [N,C,H,W]");
    const Index planes = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const Index ho = 2 * h, wo = 2 * w;
    Tensor out({x.shape()[0], x.shape()[1], ho, wo});
    const Scalar* in = x.value().data().data();
    Scalar* o = out.data().data();
    for (Index p = 0; p < planes; ++p)
        for (Index y = 0; y < ho; ++y)
            for (Index xx = 0; xx < wo; ++xx) o[(p * ho + y) * wo + xx] = in[(p * h + y / 2) * w + xx / 2];
    return tape_of(x).record(std::move(out), {x}, [planes, h, w, ho, wo](const GradContext& c) {
        Scalar* gi = c.input_grads[0]->data();
        const Scalar* go = c.out_grad.data();
        for (Index p = 0; p < planes; ++p)
            for (Index y = 0; y < ho; ++y)
                for (Index xx = 0; xx < wo; ++xx) gi[(p * h + y / 2) * w + xx / 2] += go[(p * ho + y) * wo + xx];
    }, "upsample2");
}

Var global_avg_pool(Var x)
{
    if (x.shape().size() != 4) throw std::invalid_argument("global_avg_pool expects [N,C,H,W]");
    const Index n = x.shape()[0], ch = x.shape()[1], s = x.shape()[2] * x.shape()[3];
    Tensor out({n, ch});
    out.data() = x.value().matrix(n * ch, s).rowwise().mean();
    return tape_of(x).record(std::move(out), {x}, [n, ch, s](const GradContext& c) {
        Eigen::Map<RowMatrix> g(c.input_grads[0]->data(), n * ch, s);
        g.colwise() += c.out_grad / static_cast<Scalar>(s);
    }, "global_avg_pool");
}

RowMatrix softmax_rows(const Eigen::Ref<const RowMatrix>& z, Scalar temperature)
{
    if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
    RowMatrix y = z / temperature;
    y.colwise() -= y.rowwise().maxCoeff();
    y = y.array().exp();
    y.array().colwise() /= y.rowwise().sum().array();
    return y;
}

Vector softmax(const Eigen::Ref<const Vector>& z, Scalar temperature)
{
    RowMatrix row = z.transpose();
    return softmax_rows(row, temperature).transpose();
}

Var softmax_rows(Var z, Scalar temperature)
{
    if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
    const Index c = z.shape().back();
    const Index rows = z.size() / c;
    Tensor out(z.shape());
    out.matrix(rows, c) = softmax_rows(z.value().matrix(rows, c), temperature);
    return tape_of(z).record(std::move(out), {z}, [rows, c, temperature](const GradContext& ctx) {
        auto y = ctx.out.matrix(rows, c);
        Eigen::Map<const RowMatrix> g(ctx.out_grad.data(), rows, c);
        Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
        RowMatrix d = y.array() * (g.colwise() - dots).array();
        Eigen::Map<RowMatrix>(ctx.input_grads[0]->data(), rows, c) += d / temperature;
    }, "softmax");
}

Var cross_entropy_rows(Var logits, std::span<const int> labels)
{
    const Index c = logits.shape().back();
    const Index rows = logits.size() / c;
    if (static_cast<Index>(labels.size()) != rows) throw std::invalid_argument("cross_entropy: label count mismatch");
    auto z = logits.value().matrix(rows, c);
    Tensor out({rows});
    std::vector<int> lab(labels.begin(), labels.end());
    for (Index r = 0; r < rows; ++r) {
        const int y = lab[static_cast<std::size_t>(r)];
        if (y < 0 || y >= c) throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
        const Scalar m = z.row(r).maxCoeff();
        const Scalar lse = m + std::log((z.row(r).array() - m).exp().sum());
        out[r] = lse - z(r, y);
    }
    return tape_of(logits).record(std::move(out), {logits}, [rows, c, lab](const GradContext& ctx) {
        RowMatrix p = softmax_rows(ctx.inputs[0]->matrix(rows, c));
        for (Index r = 0; r < rows; ++r) p(r, lab[static_cast<std::size_t>(r)]) -= 1.0;
        p.array().colwise() *= ctx.out_grad.array();
        Eigen::Map<RowMatrix>(ctx.input_grads[0]->data(), rows, c) += p;
    }, "cross_entropy");
}

Var mse(Var a, const Tensor& target)
{
    if (target.size() != a.size()) throw std::invalid_argument("mse: target size mismatch");
    const auto n = static_cast<Scalar>(a.size());
    const Vector diff = a.value().data() - target.data();
    Tensor out({1}, Vector::Constant(1, diff.squaredNorm() / n));
    return tape_of(a).record(std::move(out), {a}, [diff, n](const GradContext& c) {
        *c.input_grads[0] += (2.0 * c.out_grad[0] / n) * diff;
    }, "mse");
}

} // namespace gkd
