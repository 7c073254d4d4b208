#include "mor/accounting.hpp"

#include <stdexcept>

namespace mor {

MethodSpec MethodSpec::lora(std::size_t rank) {
    return {Method::lora, rank, 1, false};
}

MethodSpec MethodSpec::dora(std::size_t rank) {
    return {Method::dora, rank, 1, false};
}

MethodSpec MethodSpec::moelora(std::size_t experts, std::size_t rank) {
    return {Method::moelora, rank, experts, true};
}

MethodSpec MethodSpec::mor(std::size_t experts, std::size_t rank) {
    return {Method::mor, rank, experts, true};
}

std::string method_name(const MethodSpec& spec) {
    switch (spec.method) {
        case Method::lora:
            return "LoRA (R" + std::to_string(spec.rank) + ")";
        case Method::dora:
            return "DoRA (R" + std::to_string(spec.rank) + ")";
        case Method::moelora:
            return "MoELoRA (N" + std::to_string(spec.experts) + "R" +
                   std::to_string(spec.rank) + ")";
        case Method::mor:
            return "MoR (E" + std::to_string(spec.experts) + "R" +
                   std::to_string(spec.rank) + ")";
    }
    throw std::logic_error("method_name: unknown method");
}

std::uint64_t count_params(const MethodSpec& spec, const Geometry& geo) {
    if (spec.rank < 1) throw std::invalid_argument("count_params: rank must be >= 1");
    const std::uint64_t r = spec.rank;
    const std::uint64_t n = spec.experts;

    std::uint64_t per_layer = 0;
    for (const auto& [d_in, d_out] : geo.projections) {
        if (d_in == 0 || d_out == 0)
            throw std::invalid_argument("count_params: projection dims must be positive");
        const std::uint64_t din = d_in;
        const std::uint64_t dout = d_out;
        switch (spec.method) {
            case Method::lora:
                per_layer += r * (din + dout);
                break;
            case Method::dora:
                per_layer += r * (din + dout) + dout;
                break;
            case Method::moelora:
                per_layer += n * r * (din + dout) + n * din;
                break;
            case Method::mor:
                per_layer += r * (din + dout) + n * (r + dout) + n * din;
                break;
        }
    }
    return per_layer * static_cast<std::uint64_t>(geo.layers);
}

Geometry llama7b_geometry() {
    Geometry geo;
    geo.layers = 32;
    geo.projections = {{4096, 11008}, {4096, 11008}, {11008, 4096}};
    return geo;
}

}  // namespace mor
