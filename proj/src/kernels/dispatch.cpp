#include <cstdlib>
#include <string>

#include "emslab/kernels.hpp"

namespace emslab::kernels {

std::string_view isa_name(Isa isa)
{
    switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    }
    return "unknown";
}

bool isa_available(Isa isa)
{
    switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(EMSLAB_HAVE_AVX2)
        return __builtin_cpu_supports("avx2");
#else
        return false;
#endif
    }
    return false;
}

Isa detected_isa()
{
    static const Isa isa = [] {
        if (const char* env = std::getenv("EMSLAB_ISA")) {
            if (std::string(env) == "scalar") return Isa::scalar;
        }
        return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar;
    }();
    return isa;
}

BackupSweepFn select_backup_sweep(Isa isa)
{
#if defined(EMSLAB_HAVE_AVX2)
    if (isa == Isa::avx2 && isa_available(Isa::avx2)) return &backup_sweep_avx2;
#else
    (void)isa;
#endif
    return &backup_sweep_scalar;
}

void backup_sweep(const BackupArgs& args)
{
    static const BackupSweepFn fn = select_backup_sweep(detected_isa());
    fn(args);
}

}  // namespace emslab::kernels
