#pragma once

#include <cstddef>
#include <string>

namespace jm::kernels {

// Data-parallel inner loops behind the tensor ops. Two lanes exist: a scalar
// reference lane and an AVX2 lane, selected at runtime. Both lanes must
// produce bit-identical results; equivalence is enforced by tests in
// tests/test_kernels.cpp. The contract that makes this possible:
//
//   * no FMA contraction anywhere (built with -ffp-contract=off),
//   * reductions (sum, dot) use a canonical 4-accumulator blocked order:
//         acc[j] += x[4*i + j],  total = (acc0+acc2) + (acc1+acc3), then tail
//     in index order,
//   * matmul accumulates C[i,j] over k in ascending order,
//   * conv3x3 accumulates each output pixel over (c_in, ky, kx) in ascending
//     order with zero padding of one pixel.
struct KernelTable {
    const char* name;

    void (*add)(const double* a, const double* b, double* y, std::size_t n);
    void (*sub)(const double* a, const double* b, double* y, std::size_t n);
    void (*mul)(const double* a, const double* b, double* y, std::size_t n);
    void (*div)(const double* a, const double* b, double* y, std::size_t n);
    void (*add_scalar)(const double* a, double c, double* y, std::size_t n);
    void (*mul_scalar)(const double* a, double c, double* y, std::size_t n);
    void (*relu)(const double* a, double* y, std::size_t n);
    // 1.0 where a > 0, else 0.0 (the subgradient convention at 0 is 0)
    void (*relu_mask)(const double* a, double* y, std::size_t n);
    void (*sqrt)(const double* a, double* y, std::size_t n);

    double (*sum)(const double* a, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);

    // y(m,n) = a(m,k) @ b(k,n), row-major, y overwritten
    void (*matmul)(const double* a, const double* b, double* y,
                   std::size_t m, std::size_t k, std::size_t n);

    // y(co,h,w) = conv(x(ci,h,w), w(co,ci,3,3)), stride 1, zero pad 1
    void (*conv3x3)(const double* x, const double* w, double* y,
                    std::size_t ci, std::size_t h, std::size_t wd, std::size_t co);
};

enum class Lane { scalar, avx2 };

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif

bool lane_supported(Lane lane);
// Throws if the lane is not supported on this machine.
void select_lane(Lane lane);
Lane active_lane();
// Active table. Initial selection: JACMATCH_KERNELS env var
// ("scalar"/"avx2"), else AVX2 when the CPU supports it.
const KernelTable& active();

std::string lane_name(Lane lane);

}  // namespace jm::kernels
