#include <cmath>
#include <cstddef>

#include "jacmatch/kernels.hpp"

// Reference lane. Every loop here defines the canonical arithmetic order the
// AVX2 lane must reproduce bit-for-bit.

namespace jm::kernels {
namespace {

void k_add(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void k_sub(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void k_mul(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void k_div(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] / b[i];
}

void k_add_scalar(const double* a, double c, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + c;
}

void k_mul_scalar(const double* a, double c, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * c;
}

void k_relu(const double* a, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void k_relu_mask(const double* a, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] > 0.0 ? 1.0 : 0.0;
}

void k_sqrt(const double* a, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::sqrt(a[i]);
}

double k_sum(const double* a, std::size_t n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i + 0];
        acc1 += a[i + 1];
        acc2 += a[i + 2];
        acc3 += a[i + 3];
    }
    double total = (acc0 + acc2) + (acc1 + acc3);
    for (; i < n; ++i) total += a[i];
    return total;
}

double k_dot(const double* a, const double* b, std::size_t n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i + 0] * b[i + 0];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    double total = (acc0 + acc2) + (acc1 + acc3);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

void k_matmul(const double* a, const double* b, double* y,
              std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* yrow = y + i * n;
        for (std::size_t j = 0; j < n; ++j) yrow[j] = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[i * k + kk];
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

void k_conv3x3(const double* x, const double* w, double* y,
               std::size_t ci, std::size_t h, std::size_t wd, std::size_t co) {
    for (std::size_t f = 0; f < co; ++f) {
        const double* wf = w + f * ci * 9;
        for (std::size_t oh = 0; oh < h; ++oh) {
            for (std::size_t ow = 0; ow < wd; ++ow) {
                double acc = 0.0;
                for (std::size_t c = 0; c < ci; ++c) {
                    const double* xc = x + c * h * wd;
                    const double* wc = wf + c * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const long ih = static_cast<long>(oh) + ky - 1;
                        if (ih < 0 || ih >= static_cast<long>(h)) continue;
                        const double* xrow = xc + static_cast<std::size_t>(ih) * wd;
                        for (int kx = 0; kx < 3; ++kx) {
                            const long iw = static_cast<long>(ow) + kx - 1;
                            if (iw < 0 || iw >= static_cast<long>(wd)) continue;
                            acc += wc[ky * 3 + kx] * xrow[iw];
                        }
                    }
                }
                y[(f * h + oh) * wd + ow] = acc;
            }
        }
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table = {
        "scalar", k_add,    k_sub,  k_mul,       k_div,  k_add_scalar,
        k_mul_scalar, k_relu, k_relu_mask, k_sqrt, k_sum,
        k_dot,    k_matmul, k_conv3x3,
    };
    return table;
}

}  // namespace jm::kernels
