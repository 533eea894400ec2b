#include <algorithm>
#include <cmath>
#include <limits>

#include "meshseq/ops.hpp"

namespace meshseq {

namespace {

struct Dims3 {
    std::size_t batch, len, width;
};

Dims3 as3(const Tensor& t, const char* what) {
    if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
    if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
    throw ShapeError(std::string("attention: ") + what + " must be rank 2 or 3, got " +
                     shape_str(t.shape()));
}

}  // namespace

Tensor attention(const Tensor& query, const Tensor& key, const Tensor& value, std::size_t heads) {
    const Dims3 q = as3(query, "query"), k = as3(key, "key"), v = as3(value, "value");
    if (q.width != k.width)
        throw ShapeError("attention: query width " + std::to_string(q.width) +
                         " does not match key width " + std::to_string(k.width));
    if (k.len != v.len || k.batch != v.batch)
        throw ShapeError("attention: key " + shape_str(key.shape()) + " and value " +
                         shape_str(value.shape()) + " disagree");
    if (k.batch != q.batch && k.batch != 1)
        throw ShapeError("attention: key batch " + std::to_string(k.batch) +
                         " incompatible with query batch " + std::to_string(q.batch));
    if (heads == 0 || q.width % heads != 0 || v.width % heads != 0)
        throw ShapeError("attention: widths " + std::to_string(q.width) + "/" +
                         std::to_string(v.width) + " not divisible by " + std::to_string(heads) +
                         " heads");

    const std::size_t B = q.batch, Lq = q.len, Lk = k.len, D = q.width, Dv = v.width;
    const std::size_t dh = D / heads, dvh = Dv / heads;
    const std::size_t kv_stride_k = k.batch == 1 ? 0 : Lk * D;
    const std::size_t kv_stride_v = k.batch == 1 ? 0 : Lk * Dv;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto Q = query.data(), K = key.data(), V = value.data();
    std::vector<double> out(B * Lq * Dv, 0.0);
    std::vector<double> probs(B * heads * Lq * Lk);
    std::vector<double> row(Lk);

    for (std::size_t b = 0; b < B; ++b) {
        const double* qb = Q.data() + b * Lq * D;
        const double* kb = K.data() + b * kv_stride_k;
        const double* vb = V.data() + b * kv_stride_v;
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < Lq; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < Lk; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c)
                        s += qb[i * D + h * dh + c] * kb[j * D + h * dh + c];
                    row[j] = s * inv_sqrt;
                    mx = std::max(mx, row[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < Lk; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    z += row[j];
                }
                double* p = probs.data() + ((b * heads + h) * Lq + i) * Lk;
                double* o = out.data() + (b * Lq + i) * Dv + h * dvh;
                for (std::size_t j = 0; j < Lk; ++j) {
                    p[j] = row[j] / z;
                    for (std::size_t c = 0; c < dvh; ++c) o[c] += p[j] * vb[j * Dv + h * dvh + c];
                }
            }
        }
    }

    Shape shape = (query.rank() == 2 && key.rank() == 2) ? Shape{Lq, Dv} : Shape{B, Lq, Dv};
    TensorImpl *pq = query.impl().get(), *pk = key.impl().get(), *pv = value.impl().get();
    return make_op_result(
        "attention", std::move(shape), std::move(out), {query, key, value},
        [=, probs = std::move(probs)](const TensorImpl& o) {
            const auto& Qv = *pq->data;
            const auto& Kv = *pk->data;
            const auto& Vv = *pv->data;
            double* gq = pq->requires_grad ? pq->ensure_grad().data() : nullptr;
            double* gk = pk->requires_grad ? pk->ensure_grad().data() : nullptr;
            double* gv = pv->requires_grad ? pv->ensure_grad().data() : nullptr;
            std::vector<double> dp(Lk);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t i = 0; i < Lq; ++i) {
                        const double* p = probs.data() + ((b * heads + h) * Lq + i) * Lk;
                        const double* go = o.grad.data() + (b * Lq + i) * Dv + h * dvh;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < Lk; ++j) {
                            double s = 0.0;
                            const std::size_t vrow = b * kv_stride_v + j * Dv + h * dvh;
                            for (std::size_t c = 0; c < dvh; ++c) {
                                s += go[c] * Vv[vrow + c];
                                if (gv) gv[vrow + c] += p[j] * go[c];
                            }
                            dp[j] = s;
                            dot += s * p[j];
                        }
                        for (std::size_t j = 0; j < Lk; ++j) {
                            const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
                            if (ds == 0.0) continue;
                            const std::size_t qrow = (b * Lq + i) * D + h * dh;
                            const std::size_t krow = b * kv_stride_k + j * D + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) {
                                if (gq) gq[qrow + c] += ds * Kv[krow + c];
                                if (gk) gk[krow + c] += ds * Qv[qrow + c];
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace meshseq
