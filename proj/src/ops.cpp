#include "meshseq/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "detail/gemm.hpp"

namespace meshseq {

namespace {

struct AxisView {
    std::size_t outer, len, inner;
};

AxisView axis_view(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    AxisView v{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

Shape drop_axis(Shape s, std::size_t axis) {
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
    if (s.empty()) s.push_back(1);
    return s;
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

std::size_t suffix_len(const char* op, const Tensor& x, const Tensor& b) {
    const auto& xs = x.shape();
    const auto& bs = b.shape();
    bool ok = bs.size() <= xs.size();
    for (std::size_t i = 0; ok && i < bs.size(); ++i)
        ok = bs[bs.size() - 1 - i] == xs[xs.size() - 1 - i];
    if (!ok)
        throw ShapeError(std::string(op) + ": " + shape_str(bs) + " does not broadcast over " +
                         shape_str(xs));
    return b.numel();
}

inline bool wants(const TensorImpl* p) { return p->requires_grad; }

// Applies f elementwise and records df/dx * dy.
template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
    auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
    TensorImpl* px = x.impl().get();
    return make_op_result(name, x.shape(), std::move(out), {x}, [px, df](const TensorImpl& o) {
        if (!wants(px)) return;
        auto& g = px->ensure_grad();
        const auto& xv = *px->data;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(xv[i]);
    });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::ReLU;
    if (name == "gelu") return Activation::GELU;
    if (name == "identity") return Activation::Identity;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::ReLU: return "relu";
        case Activation::GELU: return "gelu";
        case Activation::Identity: return "identity";
    }
    return "identity";
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same("add", a, b);
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    TensorImpl *pa = a.impl().get(), *pb = b.impl().get();
    return make_op_result("add", a.shape(), std::move(out), {a, b}, [pa, pb](const TensorImpl& o) {
        for (TensorImpl* p : {pa, pb}) {
            if (!wants(p)) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same("sub", a, b);
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    TensorImpl *pa = a.impl().get(), *pb = b.impl().get();
    return make_op_result("sub", a.shape(), std::move(out), {a, b}, [pa, pb](const TensorImpl& o) {
        if (wants(pa)) {
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (wants(pb)) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same("mul", a, b);
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    TensorImpl *pa = a.impl().get(), *pb = b.impl().get();
    return make_op_result("mul", a.shape(), std::move(out), {a, b}, [pa, pb](const TensorImpl& o) {
        if (wants(pa)) {
            auto& g = pa->ensure_grad();
            const auto& yv = *pb->data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * yv[i];
        }
        if (wants(pb)) {
            auto& g = pb->ensure_grad();
            const auto& xv = *pa->data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * xv[i];
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    const std::size_t inner = suffix_len("add_bias", x, b);
    const std::size_t outer = x.numel() / inner;
    auto xd = x.data(), bd = b.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = xd[o * inner + i] + bd[i];
    TensorImpl *px = x.impl().get(), *pb = b.impl().get();
    return make_op_result("add_bias", x.shape(), std::move(out), {x, b},
                          [px, pb, outer, inner](const TensorImpl& o) {
                              if (wants(px)) {
                                  auto& g = px->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                              }
                              if (wants(pb)) {
                                  auto& g = pb->ensure_grad();
                                  for (std::size_t r = 0; r < outer; ++r)
                                      for (std::size_t i = 0; i < inner; ++i)
                                          g[i] += o.grad[r * inner + i];
                              }
                          });
}

Tensor mul_bias(const Tensor& x, const Tensor& b) {
    const std::size_t inner = suffix_len("mul_bias", x, b);
    const std::size_t outer = x.numel() / inner;
    auto xd = x.data(), bd = b.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = xd[o * inner + i] * bd[i];
    TensorImpl *px = x.impl().get(), *pb = b.impl().get();
    return make_op_result("mul_bias", x.shape(), std::move(out), {x, b},
                          [px, pb, outer, inner](const TensorImpl& o) {
                              const auto& xv = *px->data;
                              const auto& bv = *pb->data;
                              if (wants(px)) {
                                  auto& g = px->ensure_grad();
                                  for (std::size_t r = 0; r < outer; ++r)
                                      for (std::size_t i = 0; i < inner; ++i)
                                          g[r * inner + i] += o.grad[r * inner + i] * bv[i];
                              }
                              if (wants(pb)) {
                                  auto& g = pb->ensure_grad();
                                  for (std::size_t r = 0; r < outer; ++r)
                                      for (std::size_t i = 0; i < inner; ++i)
                                          g[i] += o.grad[r * inner + i] * xv[r * inner + i];
                              }
                          });
}

Tensor scale(const Tensor& x, double s) {
    return unary("scale", x, [s](double v) { return s * v; }, [s](double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
    return unary("add_scalar", x, [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Tensor square(const Tensor& x) {
    return unary("square", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data())
        if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
    return unary("log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
    return unary("exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor clamp_min(const Tensor& x, double floor) {
    return unary(
        "clamp_min", x, [floor](double v) { return v > floor ? v : floor; },
        [floor](double v) { return v > floor ? 1.0 : 0.0; });
}

Tensor relu(const Tensor& x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    return unary(
        "gelu", x,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v))); },
        [](double v) {
            const double t = std::tanh(kGeluC * (v + 0.044715 * v * v * v));
            return 0.5 * (1.0 + t) +
                   0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        });
}

Tensor activate(const Tensor& x, Activation a) {
    switch (a) {
        case Activation::ReLU: return relu(x);
        case Activation::GELU: return gelu(x);
        case Activation::Identity: return x;
    }
    return x;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
    TensorImpl *pa = a.impl().get(), *pb = b.impl().get();
    return make_op_result("matmul", {m, n}, std::move(out), {a, b},
                          [pa, pb, m, k, n](const TensorImpl& o) {
                              // dA = dC B^T, dB = A^T dC
                              if (wants(pa))
                                  detail::gemm_nt(m, n, k, o.grad.data(), pb->data->data(),
                                                  pa->ensure_grad().data());
                              if (wants(pb))
                                  detail::gemm_tn(m, k, n, pa->data->data(), o.grad.data(),
                                                  pb->ensure_grad().data());
                          });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    auto as3 = [](const Tensor& t) -> std::array<std::size_t, 3> {
        if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
        if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
        throw ShapeError("bmm: operands must be rank 2 or 3, got " + shape_str(t.shape()));
    };
    const auto sa = as3(a), sb = as3(b);
    if (sa[2] != sb[1] || (sa[0] != sb[0] && sa[0] != 1 && sb[0] != 1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t batch = std::max(sa[0], sb[0]);
    const std::size_t m = sa[1], k = sa[2], n = sb[2];
    const std::size_t stride_a = sa[0] == 1 ? 0 : m * k;
    const std::size_t stride_b = sb[0] == 1 ? 0 : k * n;
    std::vector<double> out(batch * m * n, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t i = 0; i < batch; ++i)
        detail::gemm_nn(m, k, n, ad + i * stride_a, bd + i * stride_b, out.data() + i * m * n);
    Shape shape = (a.rank() == 2 && b.rank() == 2) ? Shape{m, n} : Shape{batch, m, n};
    TensorImpl *pa = a.impl().get(), *pb = b.impl().get();
    return make_op_result(
        "bmm", std::move(shape), std::move(out), {a, b},
        [pa, pb, batch, m, k, n, stride_a, stride_b](const TensorImpl& o) {
            if (wants(pa)) {
                double* ga = pa->ensure_grad().data();
                for (std::size_t i = 0; i < batch; ++i)
                    detail::gemm_nt(m, n, k, o.grad.data() + i * m * n,
                                    pb->data->data() + i * stride_b, ga + i * stride_a);
            }
            if (wants(pb)) {
                double* gb = pb->ensure_grad().data();
                for (std::size_t i = 0; i < batch; ++i)
                    detail::gemm_tn(m, k, n, pa->data->data() + i * stride_a,
                                    o.grad.data() + i * m * n, gb + i * stride_b);
            }
        });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (w.rank() != 2 || x.shape().back() != w.dim(0))
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
    const std::size_t rows = x.numel() / w.dim(0);
    Tensor y = matmul(reshape(x, {rows, w.dim(0)}), w);
    if (bias.defined()) y = add_bias(y, bias);
    Shape out = x.shape();
    out.back() = w.dim(1);
    return reshape(y, std::move(out));
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto xd = x.data();
    TensorImpl* px = x.impl().get();
    return make_op_result("reshape", std::move(shape), {xd.begin(), xd.end()}, {x},
                          [px](const TensorImpl& o) {
                              if (!wants(px)) return;
                              auto& g = px->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                          });
}

namespace {

// For each output flat index, the flat index of the same element in the input.
std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& axes) {
    const std::size_t r = in.size();
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
    Shape out(r);
    std::vector<std::size_t> stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out[i] = in[axes[i]];
        stride[i] = in_stride[axes[i]];
    }
    const std::size_t total = shape_numel(in);
    std::vector<std::size_t> map(total);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t f = 0; f < total; ++f) {
        map[f] = src;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            src += stride[d];
            if (idx[d] < out[d]) break;
            src -= stride[d] * out[d];
            idx[d] = 0;
        }
    }
    return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const auto& s = x.shape();
    if (axes.size() != s.size())
        throw ShapeError("permute: " + std::to_string(axes.size()) + " axes given for " +
                         shape_str(s));
    std::vector<bool> seen(s.size(), false);
    for (auto a : axes) {
        if (a >= s.size() || seen[a])
            throw ShapeError("permute: axes are not a permutation of " + shape_str(s));
        seen[a] = true;
    }
    Shape out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[axes[i]];
    auto map = permutation_map(s, axes);
    auto xd = x.data();
    std::vector<double> values(xd.size());
    for (std::size_t f = 0; f < map.size(); ++f) values[f] = xd[map[f]];
    TensorImpl* px = x.impl().get();
    return make_op_result("permute", std::move(out), std::move(values), {x},
                          [px, map = std::move(map)](const TensorImpl& o) {
                              if (!wants(px)) return;
                              auto& g = px->ensure_grad();
                              for (std::size_t f = 0; f < map.size(); ++f) g[map[f]] += o.grad[f];
                          });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto v = axis_view(x.shape(), axis, "slice");
    if (begin >= end || end > v.len)
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis of length " + std::to_string(v.len));
    const std::size_t w = end - begin;
    Shape out = x.shape();
    out[axis] = w;
    auto xd = x.data();
    std::vector<double> values(v.outer * w * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o)
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * v.len + begin) * v.inner),
                    w * v.inner, values.begin() + static_cast<std::ptrdiff_t>(o * w * v.inner));
    TensorImpl* px = x.impl().get();
    return make_op_result("slice", std::move(out), std::move(values), {x},
                          [px, v, begin, w](const TensorImpl& o) {
                              if (!wants(px)) return;
                              auto& g = px->ensure_grad();
                              for (std::size_t r = 0; r < v.outer; ++r)
                                  for (std::size_t i = 0; i < w * v.inner; ++i)
                                      g[(r * v.len + begin) * v.inner + i] +=
                                          o.grad[r * w * v.inner + i];
                          });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape out = parts[0].shape();
    if (axis >= out.size()) throw ShapeError("concat: axis out of range for " + shape_str(out));
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out.size()) throw ShapeError("concat: rank mismatch");
        s[axis] = out[axis];
        if (s != out)
            throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " +
                             shape_str(parts[0].shape()));
        total += p.dim(axis);
    }
    out[axis] = total;
    const auto v = axis_view(out, axis, "concat");
    std::vector<double> values(shape_numel(out));
    std::vector<std::size_t> offsets;
    std::vector<TensorImpl*> impls;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(axis);
        auto pd = p.data();
        for (std::size_t o = 0; o < v.outer; ++o)
            std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * w * v.inner), w * v.inner,
                        values.begin() + static_cast<std::ptrdiff_t>((o * v.len + off) * v.inner));
        offsets.push_back(off);
        impls.push_back(p.impl().get());
        off += w;
    }
    return make_op_result("concat", std::move(out), std::move(values), parts,
                          [impls, offsets, v, axis](const TensorImpl& o) {
                              for (std::size_t k = 0; k < impls.size(); ++k) {
                                  TensorImpl* p = impls[k];
                                  if (!wants(p)) continue;
                                  auto& g = p->ensure_grad();
                                  const std::size_t w = p->shape[axis];
                                  for (std::size_t r = 0; r < v.outer; ++r)
                                      for (std::size_t i = 0; i < w * v.inner; ++i)
                                          g[r * w * v.inner + i] +=
                                              o.grad[(r * v.len + offsets[k]) * v.inner + i];
                              }
                          });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    TensorImpl* px = x.impl().get();
    return make_op_result("sum", {1}, {s}, {x}, [px](const TensorImpl& o) {
        if (!wants(px)) return;
        auto& g = px->ensure_grad();
        for (auto& gi : g) gi += o.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    const auto v = axis_view(x.shape(), axis, "sum_axis");
    auto xd = x.data();
    std::vector<double> out(v.outer * v.inner, 0.0);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i)
                out[o * v.inner + i] += xd[(o * v.len + l) * v.inner + i];
    TensorImpl* px = x.impl().get();
    return make_op_result("sum_axis", drop_axis(x.shape(), axis), std::move(out), {x},
                          [px, v](const TensorImpl& o) {
                              if (!wants(px)) return;
                              auto& g = px->ensure_grad();
                              for (std::size_t r = 0; r < v.outer; ++r)
                                  for (std::size_t l = 0; l < v.len; ++l)
                                      for (std::size_t i = 0; i < v.inner; ++i)
                                          g[(r * v.len + l) * v.inner + i] += o.grad[r * v.inner + i];
                          });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor variance_axis(const Tensor& x, std::size_t axis) {
    const auto v = axis_view(x.shape(), axis, "variance_axis");
    auto xd = x.data();
    const double inv = 1.0 / static_cast<double>(v.len);
    std::vector<double> mu(v.outer * v.inner, 0.0), out(v.outer * v.inner, 0.0);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i)
                mu[o * v.inner + i] += xd[(o * v.len + l) * v.inner + i] * inv;
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const double d = xd[(o * v.len + l) * v.inner + i] - mu[o * v.inner + i];
                out[o * v.inner + i] += d * d * inv;
            }
    TensorImpl* px = x.impl().get();
    return make_op_result("variance_axis", drop_axis(x.shape(), axis), std::move(out), {x},
                          [px, v, inv, mu = std::move(mu)](const TensorImpl& o) {
                              if (!wants(px)) return;
                              auto& g = px->ensure_grad();
                              const auto& xv = *px->data;
                              for (std::size_t r = 0; r < v.outer; ++r)
                                  for (std::size_t l = 0; l < v.len; ++l)
                                      for (std::size_t i = 0; i < v.inner; ++i) {
                                          const std::size_t f = (r * v.len + l) * v.inner + i;
                                          g[f] += o.grad[r * v.inner + i] * 2.0 * inv *
                                                  (xv[f] - mu[r * v.inner + i]);
                                      }
                          });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto v = axis_view(x.shape(), axis, "softmax");
    auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.len * v.inner + i;
            double mx = xd[base];
            for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, xd[base + l * v.inner]);
            double s = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) {
                const double e = std::exp(xd[base + l * v.inner] - mx);
                out[base + l * v.inner] = e;
                s += e;
            }
            for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= s;
        }
    TensorImpl* px = x.impl().get();
    return make_op_result("softmax", x.shape(), std::move(out), {x}, [px, v](const TensorImpl& o) {
        if (!wants(px)) return;
        auto& g = px->ensure_grad();
        const auto& y = *o.data;
        for (std::size_t r = 0; r < v.outer; ++r)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t base = r * v.len * v.inner + i;
                double dot = 0.0;
                for (std::size_t l = 0; l < v.len; ++l)
                    dot += o.grad[base + l * v.inner] * y[base + l * v.inner];
                for (std::size_t l = 0; l < v.len; ++l) {
                    const std::size_t f = base + l * v.inner;
                    g[f] += y[f] * (o.grad[f] - dot);
                }
            }
    });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const auto v = axis_view(x.shape(), axis, "log_softmax");
    auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.len * v.inner + i;
            double c = xd[base];
            for (std::size_t l = 1; l < v.len; ++l) c = std::max(c, xd[base + l * v.inner]);
            double s = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) s += std::exp(xd[base + l * v.inner] - c);
            const double lse = std::log(s);
            for (std::size_t l = 0; l < v.len; ++l)
                out[base + l * v.inner] = (xd[base + l * v.inner] - c) - lse;
        }
    TensorImpl* px = x.impl().get();
    return make_op_result("log_softmax", x.shape(), std::move(out), {x},
                          [px, v](const TensorImpl& o) {
                              if (!wants(px)) return;
                              auto& g = px->ensure_grad();
                              const auto& y = *o.data;
                              for (std::size_t r = 0; r < v.outer; ++r)
                                  for (std::size_t i = 0; i < v.inner; ++i) {
                                      const std::size_t base = r * v.len * v.inner + i;
                                      double total = 0.0;
                                      for (std::size_t l = 0; l < v.len; ++l)
                                          total += o.grad[base + l * v.inner];
                                      for (std::size_t l = 0; l < v.len; ++l) {
                                          const std::size_t f = base + l * v.inner;
                                          g[f] += o.grad[f] - std::exp(y[f]) * total;
                                      }
                                  }
                          });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t n = x.shape().back();
    if (gain.numel() != n || bias.numel() != n)
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last axis of " +
                         shape_str(x.shape()));
    const std::size_t rows = x.numel() / n;
    auto xd = x.data(), gd = gain.data(), bd = bias.data();
    std::vector<double> out(xd.size()), xhat(xd.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += row[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) {
            xhat[r * n + i] = (row[i] - mu) * inv_std[r];
            out[r * n + i] = xhat[r * n + i] * gd[i] + bd[i];
        }
    }
    TensorImpl *px = x.impl().get(), *pg = gain.impl().get(), *pb = bias.impl().get();
    return make_op_result(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [px, pg, pb, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            const TensorImpl& o) {
            const auto& gv = *pg->data;
            if (wants(px)) {
                auto& g = px->ensure_grad();
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dxh = o.grad[r * n + i] * gv[i];
                        m1 += dxh;
                        m2 += dxh * xhat[r * n + i];
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dxh = o.grad[r * n + i] * gv[i];
                        g[r * n + i] += inv_std[r] * (dxh - m1 - xhat[r * n + i] * m2);
                    }
                }
            }
            if (wants(pg)) {
                auto& g = pg->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[r * n + i] * xhat[r * n + i];
            }
            if (wants(pb)) {
                auto& g = pb->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[r * n + i];
            }
        });
}

Tensor row_norm(const Tensor& x, double eps) {
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    auto xd = x.data();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = eps;
        for (std::size_t i = 0; i < n; ++i) s += xd[r * n + i] * xd[r * n + i];
        out[r] = std::sqrt(s);
    }
    Shape shape = x.shape();
    shape.pop_back();
    if (shape.empty()) shape.push_back(1);
    TensorImpl* px = x.impl().get();
    return make_op_result("row_norm", std::move(shape), std::move(out), {x},
                          [px, n, rows](const TensorImpl& o) {
                              if (!wants(px)) return;
                              auto& g = px->ensure_grad();
                              const auto& xv = *px->data;
                              const auto& y = *o.data;
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t i = 0; i < n; ++i)
                                      g[r * n + i] += o.grad[r] * xv[r * n + i] / y[r];
                          });
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

}  // namespace meshseq
