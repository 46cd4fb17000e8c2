#pragma once

#include <cstdint>
#include <span>

#include "convseq/tensor.hpp"

namespace convseq {

// Token-wise categorical cross-entropy: mean over unmasked rows t of
// -log softmax(logits[t])[targets[t]]. pad_mask[t] != 0 excludes row t; an
// empty mask excludes nothing. Throws ContractError if every row is masked.
Tensor seq_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                         std::span<const std::uint8_t> pad_mask = {});

}  // namespace convseq
