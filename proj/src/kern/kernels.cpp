#include "ctaf/kern/kernels.hpp"

#include <atomic>
#include <cstdlib>

#include "ctaf/common/errors.hpp"
#include "tables.hpp"

namespace ctaf::kern {
namespace {

bool cpu_supports(const char* variant) {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  if (std::string_view(variant) == "avx2")
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  if (std::string_view(variant) == "avx512")
    return __builtin_cpu_supports("avx512f");
  return false;
#else
  (void)variant;
  return false;
#endif
}

const KernelTable* lookup(std::string_view name) {
  if (name == "scalar") return &scalar_table();
  if (name == "avx2" && cpu_supports("avx2")) return avx2_table_or_null();
  if (name == "avx512" && cpu_supports("avx512")) return avx512_table_or_null();
  return nullptr;
}

const KernelTable* pick_default() {
  if (const char* env = std::getenv("CTAF_KERNELS")) {
    const KernelTable* t = lookup(env);
    if (!t)
      throw ConfigError(std::string("CTAF_KERNELS=") + env +
                        " names an unavailable kernel variant");
    return t;
  }
  if (const KernelTable* t = lookup("avx512")) return t;
  if (const KernelTable* t = lookup("avx2")) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

std::vector<std::string> available() {
  std::vector<std::string> out{"scalar"};
  if (lookup("avx2")) out.emplace_back("avx2");
  if (lookup("avx512")) out.emplace_back("avx512");
  return out;
}

const KernelTable& table(std::string_view name) {
  const KernelTable* t = lookup(name);
  if (!t)
    throw ConfigError("kernel variant '" + std::string(name) +
                      "' is not available on this machine");
  return *t;
}

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (!t) {
    t = pick_default();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void set_active(std::string_view name) {
  g_active.store(&table(name), std::memory_order_release);
}

}  // namespace ctaf::kern
