#include "mor/adapters.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mor {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Vector row_of(const Matrix& m, std::size_t i) {
    Vector v(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) v[j] = m(i, j);
    return v;
}

}  // namespace

LoRALayer make_lora_layer(Matrix w, std::size_t rank, double alpha, RngState& rng) {
    require(rank >= 1 && rank <= std::min(w.rows(), w.cols()),
            "make_lora_layer: rank must satisfy 1 <= r <= min(d_in, d_out)");
    LoRALayer layer;
    layer.rank = rank;
    layer.alpha = alpha;
    layer.a = rng_gaussian_matrix(rng, rank, w.cols(), 0.0,
                                  1.0 / std::sqrt(static_cast<double>(rank)));
    layer.b = Matrix(w.rows(), rank);
    layer.w = std::move(w);
    return layer;
}

MoELoRALayer make_moelora_layer(Matrix w, std::size_t n_experts, std::size_t rank,
                                double alpha, RngState& rng) {
    require(n_experts >= 1, "make_moelora_layer: need at least one expert");
    require(rank >= 1 && rank <= std::min(w.rows(), w.cols()),
            "make_moelora_layer: rank must satisfy 1 <= r <= min(d_in, d_out)");
    MoELoRALayer layer;
    layer.rank = rank;
    layer.alpha = alpha;
    const double a_std = 1.0 / std::sqrt(static_cast<double>(rank));
    for (std::size_t i = 0; i < n_experts; ++i) {
        MoELoRAExpert e;
        e.a = rng_gaussian_matrix(rng, rank, w.cols(), 0.0, a_std);
        e.b = Matrix(w.rows(), rank);
        layer.experts.push_back(std::move(e));
    }
    layer.wr = rng_gaussian_matrix(rng, n_experts, w.cols(), 0.0, 0.02);
    layer.w = std::move(w);
    return layer;
}

MoRLayer make_mor_layer(Matrix w, std::size_t n_experts, std::size_t rank,
                        double alpha, RouterKind router, RngState& rng) {
    require(n_experts >= 1, "make_mor_layer: need at least one expert");
    require(rank >= 1 && rank <= std::min(w.rows(), w.cols()),
            "make_mor_layer: rank must satisfy 1 <= r <= min(d_in, d_out)");
    MoRLayer layer;
    layer.rank = rank;
    layer.alpha = alpha;
    layer.n_experts = n_experts;
    layer.router = router;
    layer.a = rng_gaussian_matrix(rng, rank, w.cols(), 0.0,
                                  1.0 / std::sqrt(static_cast<double>(rank)));
    layer.b = Matrix(w.rows(), rank);
    layer.omega_a = Matrix(n_experts, rank, 1.0);
    layer.omega_b = Matrix(n_experts, w.rows(), 1.0);
    layer.wr = rng_gaussian_matrix(rng, n_experts, w.cols(), 0.0, 0.02);
    layer.w = std::move(w);
    return layer;
}

Vector lora_forward(const LoRALayer& layer, const Vector& x) {
    require(x.size() == layer.d_in(),
            "lora_forward: input size " + std::to_string(x.size()) +
                " vs layer d_in " + std::to_string(layer.d_in()));
    Vector y = matvec(layer.w, x);
    const Vector u = matvec(layer.a, x);
    const Vector z = matvec(layer.b, u);
    const double s = layer.scaling();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * z[i];
    return y;
}

Vector mor_expert_apply(const MoRLayer& layer, std::size_t expert, const Vector& x) {
    if (expert >= layer.n_experts)
        throw std::out_of_range("mor_expert_apply: expert " + std::to_string(expert) +
                                " out of range, N=" + std::to_string(layer.n_experts));
    require(x.size() == layer.d_in(),
            "mor_expert_apply: input size " + std::to_string(x.size()) +
                " vs layer d_in " + std::to_string(layer.d_in()));
    Vector u = matvec(layer.a, x);
    for (std::size_t k = 0; k < u.size(); ++k) u[k] *= layer.omega_a(expert, k);
    Vector p = matvec(layer.b, u);
    const double s = layer.scaling();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = s * (layer.omega_b(expert, j) * p[j]);
    return p;
}

Vector router_weights(const MoRLayer& layer, const Vector& x) {
    if (layer.router.type == RouterType::mean_pool)
        return Vector(layer.n_experts, 1.0 / static_cast<double>(layer.n_experts));
    require(x.size() == layer.d_in(),
            "router_weights: input size " + std::to_string(x.size()) +
                " vs layer d_in " + std::to_string(layer.d_in()));
    return softmax_stable(matvec(layer.wr, x));
}

MorOutput mor_forward(const MoRLayer& layer, const Vector& x) {
    MorOutput out;
    out.gate = router_weights(layer, x);
    out.y = matvec(layer.w, x);
    for (std::size_t i = 0; i < layer.n_experts; ++i) {
        const Vector di = mor_expert_apply(layer, i, x);
        for (std::size_t j = 0; j < out.y.size(); ++j) out.y[j] += out.gate[i] * di[j];
    }
    return out;
}

MorBatchOutput mor_forward_stacked(const MoRLayer& layer, const Matrix& x) {
    return mor_forward_stacked(layer, x, x);
}

MorBatchOutput mor_forward_stacked(const MoRLayer& layer, const Matrix& x,
                                   const Matrix& x_adapter) {
    require(x.rows() >= 1, "mor_forward_stacked: empty batch");
    require(x.cols() == layer.d_in(),
            "mor_forward_stacked: input width " + std::to_string(x.cols()) +
                " vs layer d_in " + std::to_string(layer.d_in()));
    require(x_adapter.rows() == x.rows() && x_adapter.cols() == x.cols(),
            "mor_forward_stacked: adapter input shape " + x_adapter.shape_str() +
                " vs " + x.shape_str());
    const std::size_t batch = x.rows();
    const std::size_t n = layer.n_experts;
    const std::size_t r = layer.rank;
    const std::size_t dout = layer.d_out();
    const double s = layer.scaling();

    MorBatchOutput out;
    out.y = Matrix(batch, dout);
    out.gate = Matrix(batch, n);

    for (std::size_t row = 0; row < batch; ++row) {
        const Vector xb = row_of(x, row);
        const Vector xa = row_of(x_adapter, row);
        const Vector g = router_weights(layer, xb);
        for (std::size_t i = 0; i < n; ++i) out.gate(row, i) = g[i];

        const Vector u = matvec(layer.a, xa);
        // V = omega_a ⊙ u broadcast over expert rows, then P = V * B^T,
        // Q = omega_b ⊙ P, y = Wx + s * g^T Q.
        Matrix q(n, dout);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < dout; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < r; ++k)
                    acc += (layer.omega_a(i, k) * u[k]) * layer.b(j, k);
                q(i, j) = layer.omega_b(i, j) * acc;
            }
        }
        const Vector wx = matvec(layer.w, xb);
        for (std::size_t j = 0; j < dout; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += g[i] * q(i, j);
            out.y(row, j) = wx[j] + s * acc;
        }
    }
    return out;
}

MoELoRAOutput moelora_forward(const MoELoRALayer& layer, const Vector& x) {
    require(x.size() == layer.d_in(),
            "moelora_forward: input size " + std::to_string(x.size()) +
                " vs layer d_in " + std::to_string(layer.d_in()));
    MoELoRAOutput out;
    out.gate = softmax_stable(matvec(layer.wr, x));
    out.y = matvec(layer.w, x);
    const double s = layer.scaling();
    for (std::size_t i = 0; i < layer.n_experts(); ++i) {
        const Vector u = matvec(layer.experts[i].a, x);
        const Vector z = matvec(layer.experts[i].b, u);
        for (std::size_t j = 0; j < out.y.size(); ++j)
            out.y[j] += out.gate[i] * (s * z[j]);
    }
    return out;
}

MorBatchOutput moelora_forward_batch(const MoELoRALayer& layer, const Matrix& x) {
    return moelora_forward_batch(layer, x, x);
}

MorBatchOutput moelora_forward_batch(const MoELoRALayer& layer, const Matrix& x,
                                     const Matrix& x_adapter) {
    require(x.rows() >= 1, "moelora_forward_batch: empty batch");
    require(x_adapter.rows() == x.rows() && x_adapter.cols() == x.cols(),
            "moelora_forward_batch: adapter input shape " + x_adapter.shape_str() +
                " vs " + x.shape_str());
    MorBatchOutput out;
    out.y = Matrix(x.rows(), layer.d_out());
    out.gate = Matrix(x.rows(), layer.n_experts());
    const double s = layer.scaling();
    for (std::size_t row = 0; row < x.rows(); ++row) {
        const Vector xb = row_of(x, row);
        const Vector xa = row_of(x_adapter, row);
        const Vector g = softmax_stable(matvec(layer.wr, xb));
        Vector y = matvec(layer.w, xb);
        for (std::size_t i = 0; i < layer.n_experts(); ++i) {
            out.gate(row, i) = g[i];
            const Vector u = matvec(layer.experts[i].a, xa);
            const Vector z = matvec(layer.experts[i].b, u);
            for (std::size_t j = 0; j < y.size(); ++j) y[j] += g[i] * (s * z[j]);
        }
        for (std::size_t j = 0; j < y.size(); ++j) out.y(row, j) = y[j];
    }
    return out;
}

Matrix lora_forward_batch(const LoRALayer& layer, const Matrix& x) {
    return lora_forward_batch(layer, x, x);
}

Matrix lora_forward_batch(const LoRALayer& layer, const Matrix& x,
                          const Matrix& x_adapter) {
    require(x.rows() >= 1, "lora_forward_batch: empty batch");
    require(x_adapter.rows() == x.rows() && x_adapter.cols() == x.cols(),
            "lora_forward_batch: adapter input shape " + x_adapter.shape_str() +
                " vs " + x.shape_str());
    Matrix y(x.rows(), layer.d_out());
    const double s = layer.scaling();
    for (std::size_t row = 0; row < x.rows(); ++row) {
        const Vector xb = row_of(x, row);
        const Vector xa = row_of(x_adapter, row);
        Vector yb = matvec(layer.w, xb);
        const Vector u = matvec(layer.a, xa);
        const Vector z = matvec(layer.b, u);
        for (std::size_t j = 0; j < yb.size(); ++j) y(row, j) = yb[j] + s * z[j];
    }
    return y;
}

double balance_loss(const Matrix& gates) {
    if (gates.rows() == 0)
        throw std::invalid_argument("balance_loss: empty batch");
    const std::size_t batch = gates.rows();
    const std::size_t n = gates.cols();
    std::vector<double> dispatch(n, 0.0);  // f_i
    std::vector<double> mass(n, 0.0);      // P_i
    for (std::size_t row = 0; row < batch; ++row) {
        std::size_t top = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (gates(row, i) > gates(row, top)) top = i;
        dispatch[top] += 1.0;
        for (std::size_t i = 0; i < n; ++i) mass[i] += gates(row, i);
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        loss += (dispatch[i] / static_cast<double>(batch)) *
                (mass[i] / static_cast<double>(batch));
    return static_cast<double>(n) * loss;
}

double highrank_transform_check(const Matrix& b, const Matrix& a,
                                const Vector& lambda_a, const Vector& lambda_b) {
    require(lambda_a.size() == b.cols() && lambda_a.size() == a.rows(),
            "highrank_transform_check: lambda_a length must equal the rank");
    require(lambda_b.size() == b.rows(),
            "highrank_transform_check: lambda_b length must equal d_out");
    // Explicit diagonal route, associated right to left.
    Matrix diag_a(lambda_a.size(), lambda_a.size());
    for (std::size_t i = 0; i < lambda_a.size(); ++i) diag_a(i, i) = lambda_a[i];
    Matrix diag_b(lambda_b.size(), lambda_b.size());
    for (std::size_t i = 0; i < lambda_b.size(); ++i) diag_b(i, i) = lambda_b[i];
    const Matrix explicit_route = matmul(diag_b, matmul(b, matmul(diag_a, a)));
    // Absorbed route: scalings folded into the factors.
    const Matrix absorbed = matmul(scale_rows(b, lambda_b), scale_rows(a, lambda_a));
    return frobenius_diff(explicit_route, absorbed);
}

Matrix scale_rows(const Matrix& m, const Vector& v) {
    require(v.size() == m.rows(), "scale_rows: length " + std::to_string(v.size()) +
                                      " vs rows " + std::to_string(m.rows()));
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = v[i] * m(i, j);
    return out;
}

}  // namespace mor
