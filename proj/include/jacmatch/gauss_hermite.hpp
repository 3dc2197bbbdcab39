#pragma once

#include <vector>

namespace jm::noiselab {

// Physicists' Gauss-Hermite rule: integral of exp(-t^2) f(t) dt
// ~= sum w_i f(t_i). Nodes ascend; weights are symmetric.
struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

GaussHermiteRule gauss_hermite(int order);

}  // namespace jm::noiselab
