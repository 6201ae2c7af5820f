#include "scgan/autograd.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace scgan::ag {

namespace {

thread_local bool g_grad_enabled = true;

using Strides = std::vector<std::size_t>;

Strides contiguous_strides(const Shape& s) {
    Strides st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * static_cast<std::size_t>(s[i + 1]);
    return st;
}

// Strides of `src` when broadcast over `out`; zero along broadcast dims.
Strides broadcast_strides(const Shape& src, const Shape& out) {
    Strides st = contiguous_strides(src);
    for (std::size_t i = 0; i < src.size(); ++i)
        if (src[i] == 1 && out[i] != 1) st[i] = 0;
    return st;
}

// Visits every index of `out` in row-major order, tracking offsets into two
// operands with the given strides.
template <class F>
void walk(const Shape& out, const Strides& sa, const Strides& sb, F&& f) {
    const int r = static_cast<int>(out.size());
    if (shape_numel(out) == 0) return;
    if (r == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<int> idx(r, 0);
    std::size_t o = 0, oa = 0, ob = 0;
    const int inner = out[r - 1];
    const std::size_t ia = sa[r - 1], ib = sb[r - 1];
    while (true) {
        for (int i = 0; i < inner; ++i) f(o++, oa + i * ia, ob + i * ib);
        int d = r - 2;
        for (; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
        if (d < 0) break;
    }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("broadcast rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1) out[i] = a[i];
        else if (a[i] == 1) out[i] = b[i];
        else throw std::invalid_argument("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    return out;
}

template <class F>
Tensor binary_values(const Tensor& a, const Tensor& b, F f) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t i = 0; i < out.numel(); ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    walk(os, broadcast_strides(a.shape(), os), broadcast_strides(b.shape(), os),
         [&](std::size_t o, std::size_t ia, std::size_t ib) { po[o] = f(pa[ia], pb[ib]); });
    return out;
}

template <class F>
Tensor unary_values(const Tensor& x, F f) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = f(px[i]);
    return out;
}

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    const bool record = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                      [](const Var& v) { return v.requires_grad(); });
    if (record) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(fn);
        node->op = op;
    }
    return Var(std::move(node));
}

Var reduce_like(const Var& g, const Shape& shape) {
    return g.shape() == shape ? g : sum_to(g, shape);
}

Var constant_like(const Tensor& t, double fill) { return Var::constant(Tensor(t.shape(), fill)); }

// Internal elementwise helpers used to keep backward passes differentiable.

// d/dx of exp(min(x,0)) restricted to x <= 0; zero for x > 0.
Var negexp(const Var& x) {
    Tensor v = unary_values(x.value(), [](double a) { return a > 0.0 ? 0.0 : std::exp(a); });
    return make_result(std::move(v), {x},
                       [](const Var& g, const Var& out, const std::vector<bool>&) {
                           return std::vector<Var>{mul(g, out)};
                       },
                       "negexp");
}

Var elu_deriv(const Var& x) {
    Tensor v = unary_values(x.value(), [](double a) { return a > 0.0 ? 1.0 : std::exp(a); });
    return make_result(std::move(v), {x},
                       [x](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{mul(g, negexp(x))};
                       },
                       "elu_deriv");
}

// 1/y for y > 0, else 0.
Var recip_pos(const Var& y) {
    Tensor v = unary_values(y.value(), [](double a) { return a > 0.0 ? 1.0 / a : 0.0; });
    return make_result(std::move(v), {y},
                       [](const Var& g, const Var& out, const std::vector<bool>&) {
                           return std::vector<Var>{neg(mul(g, mul(out, out)))};
                       },
                       "recip_pos");
}

struct ConvDims {
    int n, ci, h, w, co, k, ho, wo, s, p;
    int cikk() const { return ci * k * k; }
    int howo() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column ox*s - p + kx lies inside [0, w).
struct ColRange {
    int lo, hi;
};

ColRange valid_cols(const ConvDims& d, int kx) {
    const int off = kx - d.p;
    int lo = off >= 0 ? 0 : (-off + d.s - 1) / d.s;
    int hi = (d.w - 1 - off) >= 0 ? (d.w - 1 - off) / d.s + 1 : 0;
    lo = std::min(lo, d.wo);
    hi = std::clamp(hi, lo, d.wo);
    return {lo, hi};
}

void im2col(const double* x, const ConvDims& d, double* col) {
    const int howo = d.howo();
    for (int c = 0; c < d.ci; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * d.h * d.w;
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                double* dst = col + static_cast<std::size_t>((c * d.k + ky) * d.k + kx) * howo;
                const ColRange cr = valid_cols(d, kx);
                const int off = kx - d.p;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.s - d.p + ky;
                    double* row = dst + oy * d.wo;
                    if (iy < 0 || iy >= d.h) {
                        std::fill(row, row + d.wo, 0.0);
                        continue;
                    }
                    const double* xr = xc + static_cast<std::size_t>(iy) * d.w + off;
                    std::fill(row, row + cr.lo, 0.0);
                    if (d.s == 1) {
                        std::copy(xr + cr.lo, xr + cr.hi, row + cr.lo);
                    } else {
                        for (int ox = cr.lo; ox < cr.hi; ++ox) row[ox] = xr[ox * d.s];
                    }
                    std::fill(row + cr.hi, row + d.wo, 0.0);
                }
            }
        }
    }
}

// Accumulates columns back into the image (adjoint of im2col).
void col2im(const double* col, const ConvDims& d, double* x) {
    const int howo = d.howo();
    for (int c = 0; c < d.ci; ++c) {
        double* xc = x + static_cast<std::size_t>(c) * d.h * d.w;
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                const double* src = col + static_cast<std::size_t>((c * d.k + ky) * d.k + kx) * howo;
                const ColRange cr = valid_cols(d, kx);
                const int off = kx - d.p;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.s - d.p + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    double* xr = xc + static_cast<std::size_t>(iy) * d.w + off;
                    const double* row = src + oy * d.wo;
                    for (int ox = cr.lo; ox < cr.hi; ++ox) xr[ox * d.s] += row[ox];
                }
            }
        }
    }
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const ConvDims& d) {
    Tensor y({d.n, d.co, d.ho, d.wo});
    std::vector<double> col(static_cast<std::size_t>(d.cikk()) * d.howo());
    const std::size_t xs = static_cast<std::size_t>(d.ci) * d.h * d.w;
    const std::size_t ys = static_cast<std::size_t>(d.co) * d.howo();
    for (int n = 0; n < d.n; ++n) {
        im2col(x.data() + n * xs, d, col.data());
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, d.co, d.howo(), d.cikk(), 1.0, w.data(),
                    d.cikk(), col.data(), d.howo(), 0.0, y.data() + n * ys, d.howo());
    }
    return y;
}

Tensor conv_input_adjoint(const Tensor& g, const Tensor& w, const ConvDims& d) {
    Tensor x({d.n, d.ci, d.h, d.w});
    std::vector<double> col(static_cast<std::size_t>(d.cikk()) * d.howo());
    const std::size_t xs = static_cast<std::size_t>(d.ci) * d.h * d.w;
    const std::size_t gs = static_cast<std::size_t>(d.co) * d.howo();
    for (int n = 0; n < d.n; ++n) {
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, d.cikk(), d.howo(), d.co, 1.0, w.data(),
                    d.cikk(), g.data() + n * gs, d.howo(), 0.0, col.data(), d.howo());
        col2im(col.data(), d, x.data() + n * xs);
    }
    return x;
}

Tensor conv_weight_adjoint(const Tensor& x, const Tensor& g, const ConvDims& d) {
    Tensor dw({d.co, d.ci, d.k, d.k});
    std::vector<double> col(static_cast<std::size_t>(d.cikk()) * d.howo());
    const std::size_t xs = static_cast<std::size_t>(d.ci) * d.h * d.w;
    const std::size_t gs = static_cast<std::size_t>(d.co) * d.howo();
    for (int n = 0; n < d.n; ++n) {
        im2col(x.data() + n * xs, d, col.data());
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, d.co, d.cikk(), d.howo(), 1.0, g.data() + n * gs,
                    d.howo(), col.data(), d.howo(), 1.0, dw.data(), d.cikk());
    }
    return dw;
}

void require_rank(const Var& v, std::size_t r, const char* what) {
    if (v.value().rank() != r)
        throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                                    shape_str(v.shape()));
}

}  // namespace

Var Var::constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Var::leaf(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph) {
    if (output.value().numel() != 1) throw std::invalid_argument("grad: output must have a single element");

    std::vector<Var> result;
    result.reserve(inputs.size());
    if (!output.requires_grad()) {
        for (const auto& in : inputs) result.push_back(constant_like(in.value(), 0.0));
        return result;
    }

    // Topological order (inputs before consumers) over the recorded graph.
    std::vector<Node*> order;
    std::unordered_map<Node*, std::shared_ptr<Node>> owner;
    {
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        owner[output.node()] = output.node_ptr();
        stack.emplace_back(output.node(), 0);
        visited.insert(output.node());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                const Var& in = node->inputs[next++];
                if (in.requires_grad() && visited.insert(in.node()).second) {
                    owner[in.node()] = in.node_ptr();
                    stack.emplace_back(in.node(), 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::unordered_set<Node*> targets;
    for (const auto& in : inputs)
        if (in.defined()) targets.insert(in.node());

    // Which nodes lie on a path to at least one requested input.
    std::unordered_set<Node*> reaches;
    for (Node* node : order) {
        bool r = targets.count(node) > 0;
        for (const auto& in : node->inputs)
            if (reaches.count(in.node())) r = true;
        if (r) reaches.insert(node);
    }

    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();

    std::unordered_map<Node*, Var> grads;
    grads[output.node()] = constant_like(output.value(), 1.0);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!reaches.count(node) || !node->backward) continue;
        auto git = grads.find(node);
        if (git == grads.end()) continue;
        std::vector<bool> needs(node->inputs.size());
        bool any = false;
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            const Var& in = node->inputs[i];
            needs[i] = in.requires_grad() && reaches.count(in.node()) > 0;
            any = any || needs[i];
        }
        if (!any) continue;
        Var self(owner.at(node));
        std::vector<Var> in_grads = node->backward(git->second, self, needs);
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            if (!needs[i] || !in_grads[i].defined()) continue;
            Node* in = node->inputs[i].node();
            auto& slot = grads[in];
            slot = slot.defined() ? add(slot, in_grads[i]) : in_grads[i];
        }
        // Intermediate gradients are not needed once propagated.
        if (!targets.count(node)) grads.erase(node);
    }

    for (const auto& in : inputs) {
        auto it = in.defined() ? grads.find(in.node()) : grads.end();
        if (it == grads.end()) {
            result.push_back(constant_like(in.value(), 0.0));
        } else {
            result.push_back(create_graph ? it->second : it->second.detach());
        }
    }
    return result;
}

Var add(const Var& a, const Var& b) {
    Tensor v = binary_values(a.value(), b.value(), [](double x, double y) { return x + y; });
    Shape sa = a.shape(), sb = b.shape();
    return make_result(std::move(v), {a, b},
                       [sa, sb](const Var& g, const Var&, const std::vector<bool>& needs) {
                           std::vector<Var> r(2);
                           if (needs[0]) r[0] = reduce_like(g, sa);
                           if (needs[1]) r[1] = reduce_like(g, sb);
                           return r;
                       },
                       "add");
}

Var sub(const Var& a, const Var& b) {
    Tensor v = binary_values(a.value(), b.value(), [](double x, double y) { return x - y; });
    Shape sa = a.shape(), sb = b.shape();
    return make_result(std::move(v), {a, b},
                       [sa, sb](const Var& g, const Var&, const std::vector<bool>& needs) {
                           std::vector<Var> r(2);
                           if (needs[0]) r[0] = reduce_like(g, sa);
                           if (needs[1]) r[1] = neg(reduce_like(g, sb));
                           return r;
                       },
                       "sub");
}

Var mul(const Var& a, const Var& b) {
    Tensor v = binary_values(a.value(), b.value(), [](double x, double y) { return x * y; });
    return make_result(std::move(v), {a, b},
                       [a, b](const Var& g, const Var&, const std::vector<bool>& needs) {
                           std::vector<Var> r(2);
                           if (needs[0]) r[0] = reduce_like(mul(g, b), a.shape());
                           if (needs[1]) r[1] = reduce_like(mul(g, a), b.shape());
                           return r;
                       },
                       "mul");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
    Tensor v = unary_values(a.value(), [c](double x) { return c * x; });
    return make_result(std::move(v), {a},
                       [c](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{scale(g, c)};
                       },
                       "scale");
}

Var add_scalar(const Var& a, double c) {
    Tensor v = unary_values(a.value(), [c](double x) { return x + c; });
    return make_result(std::move(v), {a},
                       [](const Var& g, const Var&, const std::vector<bool>&) { return std::vector<Var>{g}; },
                       "add_scalar");
}

Var sum_to(const Var& a, const Shape& shape) {
    const Shape& src = a.shape();
    if (src.size() != shape.size())
        throw std::invalid_argument("sum_to rank mismatch " + shape_str(src) + " -> " + shape_str(shape));
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (shape[i] != src[i] && shape[i] != 1)
            throw std::invalid_argument("sum_to: incompatible " + shape_str(src) + " -> " + shape_str(shape));
    Tensor out(shape);
    const double* px = a.value().data();
    double* po = out.data();
    walk(src, contiguous_strides(src), broadcast_strides(shape, src),
         [&](std::size_t o, std::size_t, std::size_t ib) { po[ib] += px[o]; });
    Shape orig = src;
    return make_result(std::move(out), {a},
                       [orig](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{broadcast_to(g, orig)};
                       },
                       "sum_to");
}

Var broadcast_to(const Var& a, const Shape& shape) {
    const Shape& src = a.shape();
    if (src == shape) return a;
    if (src.size() != shape.size())
        throw std::invalid_argument("broadcast_to rank mismatch " + shape_str(src) + " -> " + shape_str(shape));
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (shape[i] != src[i] && src[i] != 1)
            throw std::invalid_argument("broadcast_to: incompatible " + shape_str(src) + " -> " + shape_str(shape));
    Tensor out(shape);
    const double* px = a.value().data();
    double* po = out.data();
    walk(shape, broadcast_strides(src, shape), broadcast_strides(src, shape),
         [&](std::size_t o, std::size_t ia, std::size_t) { po[o] = px[ia]; });
    Shape orig = src;
    return make_result(std::move(out), {a},
                       [orig](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{sum_to(g, orig)};
                       },
                       "broadcast_to");
}

Var reshape(const Var& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    Shape orig = a.shape();
    return make_result(a.value().reshaped(shape), {a},
                       [orig](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{reshape(g, orig)};
                       },
                       "reshape");
}

Var sum_all(const Var& a) {
    Shape ones(a.shape().size(), 1);
    return reshape(sum_to(a, ones), {1});
}

Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.value().numel()));
}

Var transpose(const Var& a) {
    require_rank(a, 2, "transpose");
    const int r = a.dim(0), c = a.dim(1);
    Tensor out({c, r});
    const double* pa = a.value().data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = pa[static_cast<std::size_t>(i) * c + j];
    return make_result(std::move(out), {a},
                       [](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{transpose(g)};
                       },
                       "transpose");
}

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw std::invalid_argument("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out({m, n});
    if (m > 0 && n > 0 && k > 0)
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a.value().data(), k,
                    b.value().data(), n, 0.0, out.data(), n);
    return make_result(std::move(out), {a, b},
                       [a, b](const Var& g, const Var&, const std::vector<bool>& needs) {
                           std::vector<Var> r(2);
                           if (needs[0]) r[0] = matmul(g, transpose(b));
                           if (needs[1]) r[1] = matmul(transpose(a), g);
                           return r;
                       },
                       "matmul");
}

Var elu(const Var& x) {
    Tensor v = unary_values(x.value(), [](double a) { return a > 0.0 ? a : std::expm1(a); });
    return make_result(std::move(v), {x},
                       [x](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{mul(g, elu_deriv(x))};
                       },
                       "elu");
}

Var tanh(const Var& x) {
    Tensor v = unary_values(x.value(), [](double a) { return std::tanh(a); });
    return make_result(std::move(v), {x},
                       [](const Var& g, const Var& out, const std::vector<bool>&) {
                           return std::vector<Var>{mul(g, add_scalar(neg(mul(out, out)), 1.0))};
                       },
                       "tanh");
}

Var sigmoid(const Var& x) {
    Tensor v = unary_values(x.value(), [](double a) { return 1.0 / (1.0 + std::exp(-a)); });
    return make_result(std::move(v), {x},
                       [](const Var& g, const Var& out, const std::vector<bool>&) {
                           return std::vector<Var>{mul(g, mul(out, add_scalar(neg(out), 1.0)))};
                       },
                       "sigmoid");
}

Var pow(const Var& x, double p) {
    Tensor v = unary_values(x.value(), [p](double a) { return std::pow(a, p); });
    return make_result(std::move(v), {x},
                       [x, p](const Var& g, const Var&, const std::vector<bool>&) {
                           if (p == 1.0) return std::vector<Var>{g};
                           return std::vector<Var>{mul(g, scale(pow(x, p - 1.0), p))};
                       },
                       "pow");
}

Var safe_sqrt(const Var& x) {
    Tensor v = unary_values(x.value(), [](double a) { return a > 0.0 ? std::sqrt(a) : 0.0; });
    return make_result(std::move(v), {x},
                       [](const Var& g, const Var& out, const std::vector<bool>&) {
                           return std::vector<Var>{mul(g, scale(recip_pos(out), 0.5))};
                       },
                       "safe_sqrt");
}

Var reciprocal_clamped(const Var& x) {
    Tensor v = unary_values(x.value(), [](double a) { return 1.0 / std::max(a, 1.0); });
    return make_result(std::move(v), {x},
                       [x](const Var& g, const Var& out, const std::vector<bool>&) {
                           Var mask = Var::constant(unary_values(x.value(), [](double a) { return a > 1.0 ? 1.0 : 0.0; }));
                           return std::vector<Var>{neg(mul(g, mul(mask, mul(out, out))))};
                       },
                       "reciprocal_clamped");
}

int conv_out_size(int in, int kernel, ConvGeometry geo) {
    return (in + 2 * geo.pad - kernel) / geo.stride + 1;
}

namespace {

ConvDims dims_from(const Shape& xs, const Shape& ws, ConvGeometry geo) {
    ConvDims d{};
    d.n = xs[0];
    d.ci = xs[1];
    d.h = xs[2];
    d.w = xs[3];
    d.co = ws[0];
    d.k = ws[2];
    d.s = geo.stride;
    d.p = geo.pad;
    d.ho = conv_out_size(d.h, d.k, geo);
    d.wo = conv_out_size(d.w, d.k, geo);
    if (ws[1] != d.ci || ws[2] != ws[3])
        throw std::invalid_argument("conv: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
    if (d.ho <= 0 || d.wo <= 0 || geo.stride <= 0)
        throw std::invalid_argument("conv: empty output for input " + shape_str(xs));
    return d;
}

}  // namespace

Var conv2d(const Var& x, const Var& w, ConvGeometry geo) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    const ConvDims d = dims_from(x.shape(), w.shape(), geo);
    Tensor y = conv_forward(x.value(), w.value(), d);
    return make_result(std::move(y), {x, w},
                       [x, w, geo, d](const Var& g, const Var&, const std::vector<bool>& needs) {
                           std::vector<Var> r(2);
                           if (needs[0]) r[0] = conv_transpose2d(g, w, geo, d.h, d.w);
                           if (needs[1]) r[1] = conv2d_weight_grad(x, g, geo, d.k);
                           return r;
                       },
                       "conv2d");
}

Var conv_transpose2d(const Var& g, const Var& w, ConvGeometry geo, int out_h, int out_w) {
    require_rank(g, 4, "conv_transpose2d input");
    require_rank(w, 4, "conv_transpose2d weight");
    const Shape xs{g.dim(0), w.dim(1), out_h, out_w};
    const ConvDims d = dims_from(xs, w.shape(), geo);
    if (g.dim(1) != d.co || g.dim(2) != d.ho || g.dim(3) != d.wo)
        throw std::invalid_argument("conv_transpose2d: input " + shape_str(g.shape()) + " does not match output size " +
                                    std::to_string(out_h) + "x" + std::to_string(out_w));
    Tensor x = conv_input_adjoint(g.value(), w.value(), d);
    return make_result(std::move(x), {g, w},
                       [g, w, geo, d](const Var& up, const Var&, const std::vector<bool>& needs) {
                           std::vector<Var> r(2);
                           if (needs[0]) r[0] = conv2d(up, w, geo);
                           if (needs[1]) r[1] = conv2d_weight_grad(up, g, geo, d.k);
                           return r;
                       },
                       "conv_transpose2d");
}

Var conv2d_weight_grad(const Var& x, const Var& g, ConvGeometry geo, int kernel) {
    require_rank(x, 4, "conv2d_weight_grad input");
    require_rank(g, 4, "conv2d_weight_grad grad");
    const Shape ws{g.dim(1), x.dim(1), kernel, kernel};
    const ConvDims d = dims_from(x.shape(), ws, geo);
    if (g.dim(0) != d.n || g.dim(2) != d.ho || g.dim(3) != d.wo)
        throw std::invalid_argument("conv2d_weight_grad: grad " + shape_str(g.shape()) + " mismatches input " +
                                    shape_str(x.shape()));
    Tensor dw = conv_weight_adjoint(x.value(), g.value(), d);
    return make_result(std::move(dw), {x, g},
                       [x, g, geo, d](const Var& up, const Var&, const std::vector<bool>& needs) {
                           std::vector<Var> r(2);
                           if (needs[0]) r[0] = conv_transpose2d(g, up, geo, d.h, d.w);
                           if (needs[1]) r[1] = conv2d(x, up, geo);
                           return r;
                       },
                       "conv2d_weight_grad");
}

namespace {

// Views a rank>=2 shape as [outer, dim1, inner].
struct Dim1View {
    std::size_t outer, mid, inner;
};

Dim1View view1(const Shape& s) {
    if (s.size() < 2) throw std::invalid_argument("dimension-1 op on rank<2 tensor " + shape_str(s));
    std::size_t inner = 1;
    for (std::size_t i = 2; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
    return {static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1]), inner};
}

}  // namespace

Var concat1(const Var& a, const Var& b) {
    Shape sa = a.shape(), sb = b.shape();
    if (sa.size() != sb.size() || sa[0] != sb[0] || !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2))
        throw std::invalid_argument("concat1: incompatible " + shape_str(sa) + " and " + shape_str(sb));
    Shape so = sa;
    so[1] = sa[1] + sb[1];
    Tensor out(so);
    const Dim1View va = view1(sa), vb = view1(sb);
    const std::size_t ca = va.mid * va.inner, cb = vb.mid * vb.inner;
    for (std::size_t n = 0; n < va.outer; ++n) {
        std::copy_n(a.value().data() + n * ca, ca, out.data() + n * (ca + cb));
        std::copy_n(b.value().data() + n * cb, cb, out.data() + n * (ca + cb) + ca);
    }
    const int la = sa[1], lb = sb[1];
    return make_result(std::move(out), {a, b},
                       [la, lb](const Var& g, const Var&, const std::vector<bool>& needs) {
                           std::vector<Var> r(2);
                           if (needs[0]) r[0] = slice1(g, 0, la);
                           if (needs[1]) r[1] = slice1(g, la, lb);
                           return r;
                       },
                       "concat1");
}

Var slice1(const Var& x, int start, int length) {
    const Shape& sx = x.shape();
    const Dim1View v = view1(sx);
    if (start < 0 || length < 0 || static_cast<std::size_t>(start + length) > v.mid)
        throw std::invalid_argument("slice1 out of range on " + shape_str(sx));
    Shape so = sx;
    so[1] = length;
    Tensor out(so);
    for (std::size_t n = 0; n < v.outer; ++n)
        std::copy_n(x.value().data() + (n * v.mid + start) * v.inner, length * v.inner,
                    out.data() + n * length * v.inner);
    const int total = sx[1];
    return make_result(std::move(out), {x},
                       [start, total](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{pad1(g, start, total)};
                       },
                       "slice1");
}

Var pad1(const Var& x, int before, int total) {
    const Shape& sx = x.shape();
    const Dim1View v = view1(sx);
    if (before < 0 || static_cast<std::size_t>(before) + v.mid > static_cast<std::size_t>(total))
        throw std::invalid_argument("pad1 out of range on " + shape_str(sx));
    Shape so = sx;
    so[1] = total;
    Tensor out(so);
    for (std::size_t n = 0; n < v.outer; ++n)
        std::copy_n(x.value().data() + n * v.mid * v.inner, v.mid * v.inner,
                    out.data() + (n * total + before) * v.inner);
    const int length = sx[1];
    return make_result(std::move(out), {x},
                       [before, length](const Var& g, const Var&, const std::vector<bool>&) {
                           return std::vector<Var>{slice1(g, before, length)};
                       },
                       "pad1");
}

}  // namespace scgan::ag
