#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mor {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Randomized self-checks with pinned tolerances; deterministic seeds.
SuiteResult check_stacked_vs_loop(std::size_t n_layers);
SuiteResult check_block_decomposition(std::size_t n_instances);
SuiteResult check_sparse_mixture(std::size_t n_instances);
SuiteResult check_truncation_curves(std::size_t n_matrices);
SuiteResult check_gradients(std::size_t n_seeds);
SuiteResult check_router_invariants();
SuiteResult check_scaling_absorption(std::size_t n_instances);

// Every suite at its standard instance count.
std::vector<SuiteResult> run_verify_suites();

}  // namespace mor
