#pragma once

#include "ctaf/kern/kernels.hpp"

// Internal: variant tables exposed to the dispatcher. A variant returns
// nullptr when its ISA was not compiled in (stub translation unit).

namespace ctaf::kern {

const KernelTable* avx2_table_or_null();
const KernelTable* avx512_table_or_null();

}  // namespace ctaf::kern
