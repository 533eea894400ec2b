#include "meshseq/params.hpp"

#include <cmath>

namespace meshseq {

Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double gain) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor t = Tensor::uniform({rows, cols}, rng, -limit, limit);
    t.set_requires_grad(true);
    return t;
}

Tensor zeros_param(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

}  // namespace meshseq
