#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "meshseq/tensor.hpp"

namespace meshseq {

class GradcheckError : public NumericError {
public:
    using NumericError::NumericError;
};

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;

    bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Compares tape gradients of fn at `inputs` against central differences
// (f(x+h) - f(x-h)) / 2h, elementwise over every input. Non-scalar outputs
// are reduced with fixed random weights drawn from `seed`. h must lie in
// [1e-6, 1e-3]. Throws GradcheckError on non-finite gradients.
GradcheckResult gradcheck(const TensorFn& fn, const std::vector<Tensor>& inputs, double h = 1e-6,
                          std::uint64_t seed = 7, double floor = 1e-8);

// Same check for a closure over existing trainable leaves (e.g. model
// parameters), which are perturbed in place and restored. Their gradient
// buffers are cleared before and after. five_point switches to the stencil
// (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h.
GradcheckResult gradcheck_in_place(const std::function<Tensor()>& fn,
                                   const std::vector<Tensor>& leaves, double h = 1e-6,
                                   std::uint64_t seed = 7, double floor = 1e-8,
                                   bool five_point = false);

}  // namespace meshseq
