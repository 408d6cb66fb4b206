#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "gridloop/kernels.hpp"

namespace gridloop::kernels {

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(GRIDLOOP_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(GRIDLOOP_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa best_isa() {
  if (isa_available(Isa::Avx2)) return Isa::Avx2;
  if (isa_available(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
    case Isa::Neon:
      return "neon";
  }
  return "unknown";
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) throw std::invalid_argument("kernel ISA not available: " + std::string(isa_name(isa)));
  switch (isa) {
#if defined(GRIDLOOP_HAVE_AVX2)
    case Isa::Avx2:
      return detail::avx2_table;
#endif
#if defined(GRIDLOOP_HAVE_NEON)
    case Isa::Neon:
      return detail::neon_table;
#endif
    default:
      return detail::scalar_table;
  }
}

namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("GRIDLOOP_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_available(Isa::Avx2)) return Isa::Avx2;
    if (v == "neon" && isa_available(Isa::Neon)) return Isa::Neon;
  }
  return best_isa();
}

struct Slot {
  std::atomic<Isa> isa;
  std::atomic<const KernelTable*> tab;
};

Slot& active_slot() {
  static Slot slot{initial_isa(), nullptr};
  static const bool init = [] {
    slot.tab.store(&table(slot.isa.load()));
    return true;
  }();
  (void)init;
  return slot;
}

}  // namespace

Isa active_isa() { return active_slot().isa.load(std::memory_order_relaxed); }

const KernelTable& active() { return *active_slot().tab.load(std::memory_order_relaxed); }

void set_active(Isa isa) {
  const KernelTable* t = &table(isa);
  active_slot().isa.store(isa, std::memory_order_relaxed);
  active_slot().tab.store(t, std::memory_order_relaxed);
}

}  // namespace gridloop::kernels
