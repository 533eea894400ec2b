#pragma once

#include <random>
#include <string>
#include <vector>

#include "meshseq/tensor.hpp"

namespace meshseq {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

// Glorot-uniform [rows x cols] leaf with requires_grad set.
Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double gain = 1.0);
Tensor zeros_param(Shape shape);

}  // namespace meshseq
