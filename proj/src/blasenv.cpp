#include "icalab/blasenv.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <unistd.h>

extern "C" char* openblas_get_corename(void);

namespace icalab::blasenv {

namespace {

bool host_has_avx512f() {
  std::ifstream f("/proc/cpuinfo");
  std::string line;
  while (std::getline(f, line))
    if (line.rfind("flags", 0) == 0) return line.find("avx512f") != std::string::npos;
  return false;
}

bool corename_is_avx512(const char* name) {
  for (const char* good : {"SkylakeX", "CooperLake", "SapphireRapids"})
    if (std::strcmp(name, good) == 0) return true;
  return false;
}

}  // namespace

void ensure_fast_kernels(int argc, char** argv) {
  (void)argc;
  if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;  // user pinned it
  if (!host_has_avx512f()) return;
  if (corename_is_avx512(openblas_get_corename())) return;
  // env must be set before the library constructor runs, so restart
  setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
  std::fprintf(stderr, "[icalab] OpenBLAS picked %s kernels on an AVX-512 host; re-executing "
               "with OPENBLAS_CORETYPE=SKYLAKEX\n", openblas_get_corename());
  execv("/proc/self/exe", argv);
  // exec failed; continue with slow kernels
  std::fprintf(stderr, "[icalab] re-exec failed; continuing with %s kernels\n",
               openblas_get_corename());
}

}  // namespace icalab::blasenv
