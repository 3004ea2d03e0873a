#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "advi/kernels.hpp"

namespace advi::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const Table& table_for(Isa isa) {
  if (!supported(isa)) {
    throw std::runtime_error("kernel ISA not supported on this CPU: " +
                             std::string(isa_name(isa)));
  }
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::Avx2: return avx2_table();
#endif
#if defined(__aarch64__)
    case Isa::Neon: return neon_table();
#endif
    default: return scalar_table();
  }
}

namespace {

const Table* choose() {
  if (const char* env = std::getenv("ADVI_SIMD")) {
    const std::string want(env);
    for (Isa isa : {Isa::Scalar, Isa::Avx2, Isa::Neon}) {
      if (want == isa_name(isa) && supported(isa)) return &table_for(isa);
    }
  }
  for (Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (supported(isa)) return &table_for(isa);
  }
  return &scalar_table();
}

std::atomic<const Table*> g_active{nullptr};

}  // namespace

const Table& active() {
  const Table* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    const Table* chosen = choose();
    g_active.compare_exchange_strong(t, chosen, std::memory_order_acq_rel);
    t = g_active.load(std::memory_order_acquire);
  }
  return *t;
}

void select(Isa isa) { g_active.store(&table_for(isa), std::memory_order_release); }

}  // namespace advi::kernels
