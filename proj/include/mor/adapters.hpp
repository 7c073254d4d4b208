#pragma once

#include <cstddef>
#include <vector>

#include "mor/matrix.hpp"
#include "mor/rng.hpp"

namespace mor {

enum class RouterType { learnable, mean_pool, balanced };

struct RouterKind {
    RouterType type = RouterType::learnable;
    double aux_coefficient = 0.0;

    static RouterKind learnable() { return {RouterType::learnable, 0.0}; }
    static RouterKind mean_pool() { return {RouterType::mean_pool, 0.0}; }
    static RouterKind balanced(double aux) { return {RouterType::balanced, aux}; }
};

// Frozen base weight plus a trainable low-rank update (alpha/r) * B * A.
struct LoRALayer {
    Matrix w;      // d_out x d_in, frozen
    Matrix a;      // r x d_in
    Matrix b;      // d_out x r
    double alpha = 32.0;
    std::size_t rank = 8;

    std::size_t d_in() const { return w.cols(); }
    std::size_t d_out() const { return w.rows(); }
    double scaling() const { return alpha / static_cast<double>(rank); }
};

struct MoELoRAExpert {
    Matrix a;  // r x d_in
    Matrix b;  // d_out x r
};

// N independent LoRA experts mixed by a soft softmax router over all of them.
struct MoELoRALayer {
    Matrix w;  // frozen
    std::vector<MoELoRAExpert> experts;
    Matrix wr;  // N x d_in
    double alpha = 32.0;
    std::size_t rank = 8;

    std::size_t d_in() const { return w.cols(); }
    std::size_t d_out() const { return w.rows(); }
    std::size_t n_experts() const { return experts.size(); }
    double scaling() const { return alpha / static_cast<double>(rank); }
};

// Shared low-rank pair (A, B) specialized per expert by diagonal scaling
// vectors; row i of omega_a / omega_b holds expert i's scalings. Only
// {a, b, omega_a, omega_b, wr} train; w stays frozen.
struct MoRLayer {
    Matrix w;        // d_out x d_in, frozen
    Matrix a;        // r x d_in, shared
    Matrix b;        // d_out x r, shared
    Matrix omega_a;  // N x r
    Matrix omega_b;  // N x d_out
    Matrix wr;       // N x d_in
    double alpha = 32.0;
    std::size_t rank = 8;
    std::size_t n_experts = 1;
    RouterKind router;

    std::size_t d_in() const { return w.cols(); }
    std::size_t d_out() const { return w.rows(); }
    double scaling() const { return alpha / static_cast<double>(rank); }
};

// Initialization: A gaussian with stddev 1/sqrt(r), B zero (so the update
// starts at zero), scaling rows at 1, router weights gaussian stddev 0.02.
LoRALayer make_lora_layer(Matrix w, std::size_t rank, double alpha, RngState& rng);
MoELoRALayer make_moelora_layer(Matrix w, std::size_t n_experts, std::size_t rank,
                                double alpha, RngState& rng);
MoRLayer make_mor_layer(Matrix w, std::size_t n_experts, std::size_t rank,
                        double alpha, RouterKind router, RngState& rng);

Vector lora_forward(const LoRALayer& layer, const Vector& x);

// Single-expert direction applied to x: (alpha/r) * (lb_i ⊙ B (la_i ⊙ A x)).
Vector mor_expert_apply(const MoRLayer& layer, std::size_t expert, const Vector& x);

// Softmax of wr*x for learnable/balanced routers; uniform 1/N for mean-pool.
Vector router_weights(const MoRLayer& layer, const Vector& x);

struct MorOutput {
    Vector y;
    Vector gate;
};
MorOutput mor_forward(const MoRLayer& layer, const Vector& x);

struct MorBatchOutput {
    Matrix y;     // batch x d_out
    Matrix gate;  // batch x N
};

// Batched form with all expert scalings evaluated in one pass per row;
// agrees with mor_forward row-by-row to 1e-12 absolute.
MorBatchOutput mor_forward_stacked(const MoRLayer& layer, const Matrix& x);

// Training variant: w and the router read x, the adapter path reads
// x_adapter (the dropout-masked input). Identical to the plain form when
// x_adapter == x.
MorBatchOutput mor_forward_stacked(const MoRLayer& layer, const Matrix& x,
                                   const Matrix& x_adapter);

struct MoELoRAOutput {
    Vector y;
    Vector gate;
};
MoELoRAOutput moelora_forward(const MoELoRALayer& layer, const Vector& x);

MorBatchOutput moelora_forward_batch(const MoELoRALayer& layer, const Matrix& x);
MorBatchOutput moelora_forward_batch(const MoELoRALayer& layer, const Matrix& x,
                                     const Matrix& x_adapter);

Matrix lora_forward_batch(const LoRALayer& layer, const Matrix& x);
Matrix lora_forward_batch(const LoRALayer& layer, const Matrix& x,
                          const Matrix& x_adapter);

// Switch-style load penalty N * sum_i f_i * P_i, where f_i is the fraction
// of rows whose argmax gate is i (ties to the lowest index) and P_i the mean
// gate mass of column i. f is a constant under differentiation.
double balance_loss(const Matrix& gates);

// Frobenius residual between the explicit diagonal-matrix product
// diag(lb) * B * diag(la) * A and the absorbed form (lb-scaled B)(la-scaled A).
double highrank_transform_check(const Matrix& b, const Matrix& a,
                                const Vector& lambda_a, const Vector& lambda_b);

// Row i multiplied by v[i]; the absorbed form of a left diagonal product.
Matrix scale_rows(const Matrix& m, const Vector& v);

}  // namespace mor
