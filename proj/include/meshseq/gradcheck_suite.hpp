#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "meshseq/gradcheck.hpp"

namespace meshseq {

constexpr double kGradTolerance = 1e-4;

struct GradcheckCase {
    std::string name;
    GradcheckResult result;
};

// Every differentiable primitive at `shapes_per_op` random small shapes.
std::vector<GradcheckCase> primitive_gradchecks(std::size_t shapes_per_op = 10, std::uint64_t seed = 1);

// Graph convolution, resampling, the part losses and a 2-step TPDist block
// (T = 2, 8-vertex graph) with respect to inputs and parameters.
std::vector<GradcheckCase> module_gradchecks(std::uint64_t seed = 2);

// Total training loss of a miniature model (n = 16, T = 2, T_d = 2, C = 4)
// with respect to every parameter.
GradcheckCase model_gradcheck(std::uint64_t seed = 3);

}  // namespace meshseq
