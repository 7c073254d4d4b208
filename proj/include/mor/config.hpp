#pragma once

#include <cstdint>
#include <string>

#include "mor/adapters.hpp"
#include "mor/bench.hpp"

namespace mor {

// One flat record covering every command. parse_config rejects unknown
// keys and reports violations by key name.
struct RunConfig {
    std::string method = "mor";  // mor | lora | moelora
    std::size_t d_in = 32;
    std::size_t d_out = 24;
    std::size_t rank = 8;
    std::size_t experts = 4;
    double alpha = 32.0;
    std::string router = "learnable";  // learnable | mean_pool | balanced
    double aux_coefficient = 0.0;
    std::string optimizer = "adam";  // adam | sgd
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 2e-4;
    std::size_t steps = 20000;
    std::size_t batch = 8;
    double dropout = 0.05;
    std::uint64_t seed = 0;
    std::size_t tasks = 4;
    std::size_t tag_width = 4;
    std::uint64_t teacher_seed = 7;
    std::size_t log_every = 50;
    std::size_t n_eval = 64;
    std::string out_dir = ".";
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

RouterKind router_kind(const RunConfig& config);
TrainConfig train_config(const RunConfig& config);

}  // namespace mor
