#include <vector>

#include "meshseq/ops.hpp"

namespace meshseq {

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 5 || weight.rank() != 5 || x.dim(2) != weight.dim(1))
        throw ShapeError("conv3d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    const std::size_t B = x.dim(0), T = x.dim(1), Ci = x.dim(2), H = x.dim(3), W = x.dim(4);
    const std::size_t Co = weight.dim(0), kT = weight.dim(2), kH = weight.dim(3), kW = weight.dim(4);
    if (kT % 2 == 0 || kH % 2 == 0 || kW % 2 == 0)
        throw ShapeError("conv3d: kernel extents must be odd, got " + shape_str(weight.shape()));
    if (bias.defined() && bias.numel() != Co)
        throw ShapeError("conv3d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(Co) + " output channels");
    const long pT = static_cast<long>(kT / 2), pH = static_cast<long>(kH / 2),
               pW = static_cast<long>(kW / 2);
    const std::size_t HW = H * W, K = kT * kH * kW;

    // packed[k][co][ci] for kernel offset k = (kt, kh, kw)
    auto wd = weight.data();
    std::vector<double> packed(K * Co * Ci);
    for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t kk = 0; kk < K; ++kk)
                packed[(kk * Co + co) * Ci + ci] = wd[(co * Ci + ci) * K + kk];

    // Visits every (output site, input site, kernel offset) triple inside the padding.
    auto for_each_tap = [=](auto&& fn) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t kt = 0; kt < kT; ++kt) {
                    const long t2 = static_cast<long>(t) + static_cast<long>(kt) - pT;
                    if (t2 < 0 || t2 >= static_cast<long>(T)) continue;
                    for (std::size_t kh = 0; kh < kH; ++kh)
                        for (std::size_t kw = 0; kw < kW; ++kw) {
                            const std::size_t kk = (kt * kH + kh) * kW + kw;
                            for (std::size_t h = 0; h < H; ++h) {
                                const long h2 = static_cast<long>(h) + static_cast<long>(kh) - pH;
                                if (h2 < 0 || h2 >= static_cast<long>(H)) continue;
                                for (std::size_t w = 0; w < W; ++w) {
                                    const long w2 = static_cast<long>(w) + static_cast<long>(kw) - pW;
                                    if (w2 < 0 || w2 >= static_cast<long>(W)) continue;
                                    const std::size_t out_base = (b * T + t) * Co * HW + h * W + w;
                                    const std::size_t in_base =
                                        (b * T + static_cast<std::size_t>(t2)) * Ci * HW +
                                        static_cast<std::size_t>(h2) * W + static_cast<std::size_t>(w2);
                                    fn(kk, out_base, in_base);
                                }
                            }
                        }
                }
    };

    auto xd = x.data();
    std::vector<double> out(B * T * Co * HW, 0.0);
    if (bias.defined()) {
        auto bd = bias.data();
        for (std::size_t bt = 0; bt < B * T; ++bt)
            for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t s = 0; s < HW; ++s) out[(bt * Co + co) * HW + s] = bd[co];
    }
    for_each_tap([&](std::size_t kk, std::size_t ob, std::size_t ib) {
        const double* wk = packed.data() + kk * Co * Ci;
        for (std::size_t co = 0; co < Co; ++co) {
            double s = 0.0;
            for (std::size_t ci = 0; ci < Ci; ++ci) s += wk[co * Ci + ci] * xd[ib + ci * HW];
            out[ob + co * HW] += s;
        }
    });

    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    TensorImpl *px = x.impl().get(), *pw = weight.impl().get();
    TensorImpl* pb = bias.defined() ? bias.impl().get() : nullptr;
    return make_op_result(
        "conv3d", {B, T, Co, H, W}, std::move(out), inputs,
        [=, packed = std::move(packed)](const TensorImpl& o) {
            const auto& xv = *px->data;
            const auto& g = o.grad;
            double* gx = px->requires_grad ? px->ensure_grad().data() : nullptr;
            std::vector<double> gpacked(pw->requires_grad ? K * Co * Ci : 0, 0.0);
            for_each_tap([&](std::size_t kk, std::size_t ob, std::size_t ib) {
                const double* wk = packed.data() + kk * Co * Ci;
                for (std::size_t co = 0; co < Co; ++co) {
                    const double go = g[ob + co * HW];
                    if (go == 0.0) continue;
                    if (gx)
                        for (std::size_t ci = 0; ci < Ci; ++ci) gx[ib + ci * HW] += wk[co * Ci + ci] * go;
                    if (!gpacked.empty()) {
                        double* gk = gpacked.data() + (kk * Co + co) * Ci;
                        for (std::size_t ci = 0; ci < Ci; ++ci) gk[ci] += go * xv[ib + ci * HW];
                    }
                }
            });
            if (!gpacked.empty()) {
                auto& gw = pw->ensure_grad();
                for (std::size_t co = 0; co < Co; ++co)
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t kk = 0; kk < K; ++kk)
                            gw[(co * Ci + ci) * K + kk] += gpacked[(kk * Co + co) * Ci + ci];
            }
            if (pb && pb->requires_grad) {
                auto& gb = pb->ensure_grad();
                for (std::size_t bt = 0; bt < B * T; ++bt)
                    for (std::size_t co = 0; co < Co; ++co)
                        for (std::size_t s = 0; s < HW; ++s) gb[co] += g[(bt * Co + co) * HW + s];
            }
        });
}

}  // namespace meshseq
