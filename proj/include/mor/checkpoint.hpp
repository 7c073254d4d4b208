#pragma once

#include <string>
#include <variant>

#include "mor/adapters.hpp"

namespace mor {

// Binary layout, little-endian throughout:
//   "MOR1" | version u16 | method tag u8 | d_in, d_out, r, N u32 | alpha f64
//   then each trainable tensor as rows u32, cols u32, row-major f64 payload.
// Tensor order: LoRA A, B; MoELoRA A_0, B_0, .., A_{N-1}, B_{N-1}, Wr;
// MoR A, B, OmegaA, OmegaB, Wr. The frozen base and the router kind are
// not stored; callers restore both after reading.
inline constexpr std::uint16_t checkpoint_version = 1;

void write_checkpoint(const LoRALayer& layer, const std::string& path);
void write_checkpoint(const MoELoRALayer& layer, const std::string& path);
void write_checkpoint(const MoRLayer& layer, const std::string& path);

using AnyLayer = std::variant<LoRALayer, MoELoRALayer, MoRLayer>;

// Throws std::runtime_error with distinct messages for a missing file,
// bad magic, unsupported version, unknown method tag, truncation, and
// trailing bytes.
AnyLayer read_checkpoint(const std::string& path);

}  // namespace mor
