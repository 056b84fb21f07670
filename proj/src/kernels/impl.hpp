#pragma once

#include "msav/kernels.hpp"

#define MSAV_IMPL_NS serial_impl
#include "impl_decls.inc"
#undef MSAV_IMPL_NS

#define MSAV_IMPL_NS parallel_impl
#include "impl_decls.inc"
#undef MSAV_IMPL_NS
