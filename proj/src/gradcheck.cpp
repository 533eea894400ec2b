#include "meshseq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "meshseq/ops.hpp"

namespace meshseq {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

GradcheckResult check_leaves(const std::function<Tensor()>& fn, const std::vector<Tensor>& leaves,
                             double h, std::uint64_t seed, double floor, bool five_point) {
    if (!(h >= 1e-6 && h <= 1e-3))
        throw GradcheckError("gradcheck: perturbation " + std::to_string(h) +
                             " outside [1e-6, 1e-3]");
    Tensor weights;
    auto scalar = [&](const Tensor& out) -> Tensor {
        if (out.numel() == 1) return out;
        if (!weights.defined()) {
            std::mt19937_64 rng(seed);
            weights = Tensor::uniform(out.shape(), rng, -1.0, 1.0);
        }
        return sum(mul(out, weights));
    };

    for (auto leaf : leaves) leaf.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor f = scalar(fn());
        tape.backward(f);
    }
    std::vector<std::vector<double>> analytic;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        analytic.push_back(leaves[k].grad());
        Tensor(leaves[k]).zero_grad();
        for (std::size_t i = 0; i < analytic.back().size(); ++i)
            if (!std::isfinite(analytic.back()[i]))
                throw GradcheckError("gradcheck: non-finite analytic gradient at input " +
                                     std::to_string(k) + " index " + std::to_string(i));
    }

    GradcheckResult result;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        auto x = Tensor(leaves[k]).mutable_data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            auto at = [&](double offset) {
                x[i] = orig + offset;
                return scalar(fn()).item();
            };
            const double d1 = at(h) - at(-h);
            const double numeric =
                five_point ? (8.0 * d1 - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h) : d1 / (2.0 * h);
            x[i] = orig;
            if (!std::isfinite(numeric))
                throw GradcheckError("gradcheck: non-finite numeric gradient at input " +
                                     std::to_string(k) + " index " + std::to_string(i));
            const double err = relative_error(analytic[k][i], numeric, floor);
            ++result.checked;
            if (result.checked == 1 || err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_input = k;
                result.worst_index = i;
                result.analytic = analytic[k][i];
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace

GradcheckResult gradcheck(const TensorFn& fn, const std::vector<Tensor>& inputs, double h,
                          std::uint64_t seed, double floor) {
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(t.detach().set_requires_grad(true));
    return check_leaves([&] { return fn(leaves); }, leaves, h, seed, floor, false);
}

GradcheckResult gradcheck_in_place(const std::function<Tensor()>& fn,
                                   const std::vector<Tensor>& leaves, double h, std::uint64_t seed,
                                   double floor, bool five_point) {
    for (const auto& t : leaves)
        if (!t.requires_grad())
            throw GradcheckError("gradcheck_in_place: every leaf must require grad");
    return check_leaves(fn, leaves, h, seed, floor, five_point);
}

}  // namespace meshseq
