#include "npssl/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace npssl::kern {
namespace {

const Ops& resolve() {
    const char* force = std::getenv("NPSSL_KERNEL");
    if (force != nullptr) {
        if (std::strcmp(force, "scalar") == 0) return scalar_ops();
        if (std::strcmp(force, "avx2") == 0 && avx2_ops() != nullptr) return *avx2_ops();
        // Unknown or unsupported request falls back to the reference path.
        return scalar_ops();
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (avx2_ops() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
        return *avx2_ops();
#endif
    return scalar_ops();
}

}  // namespace

const Ops& ops() {
    static const Ops& active = resolve();
    return active;
}

}  // namespace npssl::kern
