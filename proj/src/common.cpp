#include "ropar/common.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace ropar {

Rng::Rng(std::uint64_t seed)
    : seed_(seed),
      engine_(seed),
      torch_(at::make_generator<at::CPUGeneratorImpl>(splitmix64(seed ^ 0x7f4a7c15ULL))) {}

}  // namespace ropar
