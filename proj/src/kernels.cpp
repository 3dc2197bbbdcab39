#include "jacmatch/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "jacmatch/common.hpp"

namespace jm::kernels {
namespace {

const KernelTable* g_active = nullptr;
Lane g_lane = Lane::scalar;

Lane initial_lane() {
    if (const char* env = std::getenv("JACMATCH_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Lane::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            JM_CHECK(lane_supported(Lane::avx2), "JACMATCH_KERNELS=avx2 but CPU lacks AVX2");
            return Lane::avx2;
        }
        JM_CHECK(std::strcmp(env, "auto") == 0,
                 "unknown JACMATCH_KERNELS value '", env, "' (scalar|avx2|auto)");
    }
    return lane_supported(Lane::avx2) ? Lane::avx2 : Lane::scalar;
}

void ensure_init() {
    if (g_active == nullptr) select_lane(initial_lane());
}

}  // namespace

bool lane_supported(Lane lane) {
    if (lane == Lane::scalar) return true;
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

void select_lane(Lane lane) {
    JM_CHECK(lane_supported(lane), "kernel lane '", lane_name(lane), "' not supported on this CPU");
    switch (lane) {
        case Lane::scalar:
            g_active = &scalar_table();
            break;
        case Lane::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            g_active = &avx2_table();
            break;
#else
            JM_CHECK(false, "avx2 lane unavailable in this build");
#endif
    }
    g_lane = lane;
}

Lane active_lane() {
    ensure_init();
    return g_lane;
}

const KernelTable& active() {
    ensure_init();
    return *g_active;
}

std::string lane_name(Lane lane) {
    return lane == Lane::scalar ? "scalar" : "avx2";
}

}  // namespace jm::kernels
