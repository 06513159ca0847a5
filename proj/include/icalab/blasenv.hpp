#pragma once

namespace icalab::blasenv {

// OpenBLAS picks its kernels from cpuid at library load. Inside VMs the
// cpu model is often masked, which lands us on pre-AVX kernels and a ~5x
// slowdown. When that happens on an AVX-512 host, re-exec the process
// with OPENBLAS_CORETYPE set so the fast kernels load. Call first thing
// in main(); returns only when kernels are acceptable.
void ensure_fast_kernels(int argc, char** argv);

}  // namespace icalab::blasenv
