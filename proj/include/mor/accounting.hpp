#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mor {

// Which projections get an adapter, repeated across identical layers.
struct Geometry {
    std::size_t layers = 0;
    std::vector<std::pair<std::size_t, std::size_t>> projections;  // (d_in, d_out)
};

enum class Method { lora, dora, moelora, mor };

struct MethodSpec {
    Method method = Method::lora;
    std::size_t rank = 8;
    std::size_t experts = 1;
    bool includes_router = false;

    static MethodSpec lora(std::size_t rank);
    static MethodSpec dora(std::size_t rank);
    static MethodSpec moelora(std::size_t experts, std::size_t rank);
    static MethodSpec mor(std::size_t experts, std::size_t rank);
};

std::string method_name(const MethodSpec& spec);

// Trainable parameters per projection, summed over projections and layers:
//   LoRA     r(d_in + d_out)
//   DoRA     r(d_in + d_out) + d_out
//   MoELoRA  N r (d_in + d_out) + N d_in
//   MoR      r(d_in + d_out) + N(r + d_out) + N d_in
// Routers carry no bias. experts = 0 on MoR leaves the bare shared pair.
std::uint64_t count_params(const MethodSpec& spec, const Geometry& geo);

// 32 transformer layers, adapters on the gate/up (4096 -> 11008) and
// down (11008 -> 4096) projections.
Geometry llama7b_geometry();

inline constexpr std::uint64_t llama2_7b_total_params = 6738415616ULL;

}  // namespace mor
