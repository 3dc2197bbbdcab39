#include "jacmatch/gauss_hermite.hpp"

#include <cmath>

#include "jacmatch/common.hpp"

namespace jm::noiselab {

// Newton iteration on the Hermite recurrence (the classical gauher scheme).
GaussHermiteRule gauss_hermite(int order) {
    JM_CHECK(order >= 1, "gauss_hermite: order must be >= 1, got ", order);
    const int n = order;
    const double eps = 1e-14;
    const double pim4 = 0.7511255444649425;  // pi^{-1/4}
    const int max_iter = 100;

    GaussHermiteRule rule;
    rule.nodes.assign(static_cast<std::size_t>(n), 0.0);
    rule.weights.assign(static_cast<std::size_t>(n), 0.0);

    const int m = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0) {
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        } else if (i == 1) {
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        } else if (i == 2) {
            z = 1.86 * z - 0.86 * rule.nodes[static_cast<std::size_t>(n - 1)];
        } else if (i == 3) {
            z = 1.91 * z - 0.91 * rule.nodes[static_cast<std::size_t>(n - 2)];
        } else {
            z = 2.0 * z - rule.nodes[static_cast<std::size_t>(n - i + 1)];
        }
        double pp = 0.0;
        int iter = 0;
        for (; iter < max_iter; ++iter) {
            double p1 = pim4;
            double p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1)) * p2 -
                     std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * static_cast<double>(n)) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::fabs(z - z1) <= eps) break;
        }
        JM_CHECK(iter < max_iter, "gauss_hermite: Newton iteration did not converge at order ",
                 order);
        // store in descending-|z| halves, mirrored
        rule.nodes[static_cast<std::size_t>(n - 1 - i)] = z;
        rule.nodes[static_cast<std::size_t>(i)] = -z;
        rule.weights[static_cast<std::size_t>(n - 1 - i)] = 2.0 / (pp * pp);
        rule.weights[static_cast<std::size_t>(i)] = rule.weights[static_cast<std::size_t>(n - 1 - i)];
    }
    return rule;
}

}  // namespace jm::noiselab
