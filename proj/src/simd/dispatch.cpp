#include "ems/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace ems::simd {
namespace {

const KernelTable* detect() {
  const char* forced = std::getenv("EMS_SIMD");
  if (forced != nullptr) {
    const std::string name(forced);
    if (name == "scalar") return &scalar_kernels();
    if (name == "avx2") {
      if (avx2_kernels() == nullptr || !cpu_has_avx2())
        throw std::runtime_error("EMS_SIMD=avx2 requested but AVX2/FMA is unavailable");
      return avx2_kernels();
    }
    if (name != "auto") throw std::runtime_error("EMS_SIMD must be scalar, avx2 or auto");
  }
  if (avx2_kernels() != nullptr && cpu_has_avx2()) return avx2_kernels();
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void select(Isa isa) {
  if (isa == Isa::scalar) {
    slot().store(&scalar_kernels(), std::memory_order_release);
    return;
  }
  if (avx2_kernels() == nullptr || !cpu_has_avx2())
    throw std::runtime_error("AVX2/FMA kernels unavailable on this machine");
  slot().store(avx2_kernels(), std::memory_order_release);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace ems::simd
