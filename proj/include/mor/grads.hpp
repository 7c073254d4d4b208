#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mor/adapters.hpp"
#include "mor/matrix.hpp"

namespace mor {

struct MoRGrads {
    Matrix da;        // r x d_in
    Matrix db;        // d_out x r
    Matrix domega_a;  // N x r
    Matrix domega_b;  // N x d_out
    Matrix dwr;       // N x d_in
};

struct LoRAGrads {
    Matrix da;
    Matrix db;
};

struct MoELoRAExpertGrads {
    Matrix da;
    Matrix db;
};

struct MoELoRAGrads {
    std::vector<MoELoRAExpertGrads> experts;
    Matrix dwr;
};

// Reverse-mode gradients for a scalar loss with dY = dL/dY over the batch.
// For a balanced router the auxiliary load-penalty gradient is folded into
// dwr (f treated as constant). dwr is zero for mean-pool routers.
MoRGrads mor_backward(const MoRLayer& layer, const Matrix& x, const Matrix& dy);
MoRGrads mor_backward(const MoRLayer& layer, const Matrix& x, const Matrix& x_adapter,
                      const Matrix& dy);

LoRAGrads lora_backward(const LoRALayer& layer, const Matrix& x, const Matrix& dy);
LoRAGrads lora_backward(const LoRALayer& layer, const Matrix& x,
                        const Matrix& x_adapter, const Matrix& dy);

MoELoRAGrads moelora_backward(const MoELoRALayer& layer, const Matrix& x,
                              const Matrix& dy);
MoELoRAGrads moelora_backward(const MoELoRALayer& layer, const Matrix& x,
                              const Matrix& x_adapter, const Matrix& dy);

// Central differences (f(p+h e_i) - f(p-h e_i)) / 2h per coordinate.
// Throws std::runtime_error if the loss comes back non-finite.
Vector finite_diff_check(const std::function<double(const Vector&)>& loss,
                         const Vector& params, double h);

struct TensorCheck {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradReport {
    std::vector<TensorCheck> tensors;
    double max_rel_error = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

// Analytic-vs-numeric checks under the loss L = 0.5*||Y||^2 (plus the
// balanced-router penalty when configured). Relative error denominator is
// max(|analytic|, |numeric|, 1e-8).
GradReport check_mor_gradients(const MoRLayer& layer, const Matrix& x, double h,
                               double threshold);
GradReport check_lora_gradients(const LoRALayer& layer, const Matrix& x, double h,
                                double threshold);
GradReport check_moelora_gradients(const MoELoRALayer& layer, const Matrix& x,
                                   double h, double threshold);

// Flat parameter packing in the same fixed order the checkpoints use.
Vector flatten_mor_params(const MoRLayer& layer);
void unflatten_mor_params(MoRLayer& layer, const Vector& flat);
Vector flatten_lora_params(const LoRALayer& layer);
void unflatten_lora_params(LoRALayer& layer, const Vector& flat);
Vector flatten_moelora_params(const MoELoRALayer& layer);
void unflatten_moelora_params(MoELoRALayer& layer, const Vector& flat);

}  // namespace mor
