#include "pd/kernels.hpp"

#include "pd/errors.hpp"

#include <cstdlib>
#include <string>

namespace pd::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const Ops* avx2_ops();
#endif
#if defined(__aarch64__)
const Ops* neon_ops();
#endif

const Ops* simd_ops() {
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        return avx2_ops();
    }
    return nullptr;
#elif defined(__aarch64__)
    return neon_ops(); // NEON is baseline on aarch64
#else
    return nullptr;
#endif
}

namespace {

const Ops& select() {
    const char* env = std::getenv("PD_KERNELS");
    if (env && *env) {
        const std::string want(env);
        if (want == "scalar") return scalar_ops();
        const Ops* simd = simd_ops();
        if (simd && want == simd->name) return *simd;
        throw Error("PD_KERNELS=" + want + " not available on this machine");
    }
    const Ops* simd = simd_ops();
    return simd ? *simd : scalar_ops();
}

} // namespace

const Ops& active() {
    static const Ops& ops = select();
    return ops;
}

std::string active_name() {
    return active().name;
}

} // namespace pd::kernels
