#include "geobeam/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace geobeam::kernels {
namespace {

const KernelTable* select() {
    const char* env = std::getenv("GEOBEAM_SIMD");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
        if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return &avx2_table();
#endif
        // "auto" or anything unrecognized falls through to detection.
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (avx2_supported()) return &avx2_table();
#endif
    return &scalar_table();
}

}  // namespace

const KernelTable& active() {
    static const KernelTable* table = select();
    return *table;
}

std::string active_lane_name() { return active().name; }

}  // namespace geobeam::kernels
