#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstddef>

#include "jacmatch/kernels.hpp"

// AVX2 lane. Compiled with -mavx2 for this translation unit only; the
// dispatcher guards selection with a runtime CPU check. No FMA: fused
// rounding would diverge from the scalar lane.

namespace jm::kernels {
namespace {

void k_add(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void k_sub(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void k_mul(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void k_div(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] / b[i];
}

void k_add_scalar(const double* a, double c, double* y, std::size_t n) {
    const __m256d cv = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), cv));
    }
    for (; i < n; ++i) y[i] = a[i] + c;
}

void k_mul_scalar(const double* a, double c, double* y, std::size_t n) {
    const __m256d cv = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), cv));
    }
    for (; i < n; ++i) y[i] = a[i] * c;
}

void k_relu(const double* a, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        // maxpd(a, 0): for a == +-0 or NaN this picks the second operand,
        // matching the scalar a > 0 ? a : 0 exactly.
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(a + i), zero));
    }
    for (; i < n; ++i) y[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void k_relu_mask(const double* a, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gt = _mm256_cmp_pd(_mm256_loadu_pd(a + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(y + i, _mm256_and_pd(gt, one));
    }
    for (; i < n; ++i) y[i] = a[i] > 0.0 ? 1.0 : 0.0;
}

void k_sqrt(const double* a, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_sqrt_pd(_mm256_loadu_pd(a + i)));
    }
    for (; i < n; ++i) y[i] = __builtin_sqrt(a[i]);
}

// Combine the four accumulator lanes as (acc0+acc2) + (acc1+acc3), the
// canonical order of the reference lane.
inline double hsum_lanes(__m256d acc) {
    const __m128d lo = _mm256_castpd256_pd128(acc);       // [acc0, acc1]
    const __m128d hi = _mm256_extractf128_pd(acc, 1);     // [acc2, acc3]
    const __m128d pair = _mm_add_pd(lo, hi);              // [acc0+acc2, acc1+acc3]
    return _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
}

double k_sum(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double total = hsum_lanes(acc);
    for (; i < n; ++i) total += a[i];
    return total;
}

double k_dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    double total = hsum_lanes(acc);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

void k_matmul(const double* a, const double* b, double* y,
              std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* yrow = y + i * n;
        std::size_t j = 0;
        const __m256d zero = _mm256_setzero_pd();
        for (; j + 4 <= n; j += 4) _mm256_storeu_pd(yrow + j, zero);
        for (; j < n; ++j) yrow[j] = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[i * k + kk];
            const __m256d avv = _mm256_set1_pd(av);
            const double* brow = b + kk * n;
            j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d prod = _mm256_mul_pd(avv, _mm256_loadu_pd(brow + j));
                _mm256_storeu_pd(yrow + j, _mm256_add_pd(_mm256_loadu_pd(yrow + j), prod));
            }
            for (; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

// Scalar fallback for border pixels; identical accumulation order to the
// reference lane.
inline double conv_pixel(const double* x, const double* wf,
                         std::size_t ci, std::size_t h, std::size_t wd,
                         std::size_t oh, std::size_t ow) {
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
    return acc;
}

void k_conv3x3(const double* x, const double* w, double* y,
               std::size_t ci, std::size_t h, std::size_t wd, std::size_t co) {
    for (std::size_t f = 0; f < co; ++f) {
        const double* wf = w + f * ci * 9;
        for (std::size_t oh = 0; oh < h; ++oh) {
            double* yrow = y + (f * h + oh) * wd;
            std::size_t ow = 0;
            if (wd >= 6) {
                yrow[0] = conv_pixel(x, wf, ci, h, wd, oh, 0);
                ow = 1;
                for (; ow + 4 <= wd - 1; ow += 4) {
                    __m256d acc = _mm256_setzero_pd();
                    for (std::size_t c = 0; c < ci; ++c) {
                        const double* xc = x + c * h * wd;
                        const double* wc = wf + c * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const long ih = static_cast<long>(oh) + ky - 1;
                            if (ih < 0 || ih >= static_cast<long>(h)) continue;
                            const double* xrow = xc + static_cast<std::size_t>(ih) * wd;
                            for (int kx = 0; kx < 3; ++kx) {
                                const __m256d wv = _mm256_set1_pd(wc[ky * 3 + kx]);
                                const __m256d xv = _mm256_loadu_pd(xrow + ow + kx - 1);
                                acc = _mm256_add_pd(acc, _mm256_mul_pd(wv, xv));
                            }
                        }
                    }
                    _mm256_storeu_pd(yrow + ow, acc);
                }
            }
            for (; ow < wd; ++ow) yrow[ow] = conv_pixel(x, wf, ci, h, wd, oh, ow);
        }
    }
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable table = {
        "avx2",   k_add,    k_sub,  k_mul,       k_div,  k_add_scalar,
        k_mul_scalar, k_relu, k_relu_mask, k_sqrt, k_sum,
        k_dot,    k_matmul, k_conv3x3,
    };
    return table;
}

}  // namespace jm::kernels

#endif  // x86_64
