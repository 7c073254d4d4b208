#include "mor/grads.hpp"

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

// Fraction of rows whose argmax gate lands on each expert, ties to the
// lowest index. Matches the dispatch term of balance_loss.
std::vector<double> dispatch_fractions(const Matrix& gates) {
    const std::size_t batch = gates.rows();
    const std::size_t n = gates.cols();
    std::vector<double> f(n, 0.0);
    for (std::size_t row = 0; row < batch; ++row) {
        std::size_t top = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (gates(row, i) > gates(row, top)) top = i;
        f[top] += 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) f[i] /= static_cast<double>(batch);
    return f;
}

void check_batch_shapes(const char* op, const Matrix& x, const Matrix& x_adapter,
                        const Matrix& dy, std::size_t d_in, std::size_t d_out) {
    require(x.rows() >= 1, std::string(op) + ": empty batch");
    require(x.cols() == d_in, std::string(op) + ": input width " +
                                  std::to_string(x.cols()) + " vs layer d_in " +
                                  std::to_string(d_in));
    require(x_adapter.rows() == x.rows() && x_adapter.cols() == x.cols(),
            std::string(op) + ": adapter input shape " + x_adapter.shape_str() +
                " vs " + x.shape_str());
    require(dy.rows() == x.rows() && dy.cols() == d_out,
            std::string(op) + ": upstream gradient shape " + dy.shape_str() +
                " vs expected " + std::to_string(x.rows()) + "x" +
                std::to_string(d_out));
}

std::size_t numel(const Matrix& m) { return m.rows() * m.cols(); }

void pack(const Matrix& m, Vector& flat, std::size_t& pos) {
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) flat[pos++] = m(i, j);
}

void unpack(Matrix& m, const Vector& flat, std::size_t& pos) {
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = flat[pos++];
}

double rel_error(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
    return std::fabs(a - b) / denom;
}

struct Region {
    std::string name;
    std::size_t size;
};

GradReport compare_regions(const Vector& analytic, const Vector& numeric,
                           const std::vector<Region>& regions, double threshold) {
    GradReport report;
    report.threshold = threshold;
    std::size_t pos = 0;
    for (const Region& region : regions) {
        TensorCheck check;
        check.name = region.name;
        for (std::size_t i = 0; i < region.size; ++i, ++pos)
            check.max_rel_error =
                std::max(check.max_rel_error, rel_error(analytic[pos], numeric[pos]));
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.tensors.push_back(std::move(check));
    }
    report.pass = report.max_rel_error <= threshold;
    return report;
}

}  // namespace

MoRGrads mor_backward(const MoRLayer& layer, const Matrix& x, const Matrix& dy) {
    return mor_backward(layer, x, x, dy);
}

MoRGrads mor_backward(const MoRLayer& layer, const Matrix& x, const Matrix& x_adapter,
                      const Matrix& dy) {
    check_batch_shapes("mor_backward", x, x_adapter, dy, layer.d_in(), layer.d_out());
    const std::size_t batch = x.rows();
    const std::size_t n = layer.n_experts;
    const std::size_t r = layer.rank;
    const std::size_t din = layer.d_in();
    const std::size_t dout = layer.d_out();
    const double s = layer.scaling();

    MoRGrads gr{Matrix(r, din), Matrix(dout, r), Matrix(n, r), Matrix(n, dout),
                Matrix(n, din)};

    Matrix gates(batch, n);
    for (std::size_t row = 0; row < batch; ++row) {
        const Vector g = router_weights(layer, row_of(x, row));
        for (std::size_t i = 0; i < n; ++i) gates(row, i) = g[i];
    }

    // Load-penalty contribution to dL/dg, constant per column because the
    // dispatch fractions are held fixed under differentiation.
    std::vector<double> aux(n, 0.0);
    if (layer.router.type == RouterType::balanced &&
        layer.router.aux_coefficient != 0.0) {
        const std::vector<double> f = dispatch_fractions(gates);
        for (std::size_t i = 0; i < n; ++i)
            aux[i] = layer.router.aux_coefficient * static_cast<double>(n) * f[i] /
                     static_cast<double>(batch);
    }

    Vector dg(n);
    Vector du(r);
    Vector dv(r);
    Vector dp(dout);
    for (std::size_t row = 0; row < batch; ++row) {
        const Vector xb = row_of(x, row);
        const Vector xa = row_of(x_adapter, row);
        const Vector u = matvec(layer.a, xa);

        for (std::size_t k = 0; k < r; ++k) du[k] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = gates(row, i);

            // Recompute this expert's intermediates: v = omega_a_i ⊙ u,
            // p = B v, q = omega_b_i ⊙ p; the row output adds s * g_i * q.
            Vector v(r);
            for (std::size_t k = 0; k < r; ++k) v[k] = layer.omega_a(i, k) * u[k];
            Vector p(dout);
            for (std::size_t j = 0; j < dout; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < r; ++k) acc += layer.b(j, k) * v[k];
                p[j] = acc;
            }

            double gate_grad = 0.0;
            for (std::size_t j = 0; j < dout; ++j)
                gate_grad += dy(row, j) * (layer.omega_b(i, j) * p[j]);
            dg[i] = s * gate_grad + aux[i];

            for (std::size_t j = 0; j < dout; ++j) {
                const double dq = s * gi * dy(row, j);
                gr.domega_b(i, j) += dq * p[j];
                dp[j] = layer.omega_b(i, j) * dq;
            }
            for (std::size_t j = 0; j < dout; ++j)
                for (std::size_t k = 0; k < r; ++k) gr.db(j, k) += dp[j] * v[k];
            for (std::size_t k = 0; k < r; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < dout; ++j) acc += layer.b(j, k) * dp[j];
                dv[k] = acc;
            }
            for (std::size_t k = 0; k < r; ++k) {
                gr.domega_a(i, k) += dv[k] * u[k];
                du[k] += dv[k] * layer.omega_a(i, k);
            }
        }
        for (std::size_t k = 0; k < r; ++k)
            for (std::size_t j = 0; j < din; ++j) gr.da(k, j) += du[k] * xa[j];

        if (layer.router.type != RouterType::mean_pool) {
            double inner = 0.0;
            for (std::size_t i = 0; i < n; ++i) inner += gates(row, i) * dg[i];
            for (std::size_t i = 0; i < n; ++i) {
                const double dh = gates(row, i) * (dg[i] - inner);
                for (std::size_t j = 0; j < din; ++j) gr.dwr(i, j) += dh * xb[j];
            }
        }
    }
    return gr;
}

LoRAGrads lora_backward(const LoRALayer& layer, const Matrix& x, const Matrix& dy) {
    return lora_backward(layer, x, x, dy);
}

LoRAGrads lora_backward(const LoRALayer& layer, const Matrix& x,
                        const Matrix& x_adapter, const Matrix& dy) {
    check_batch_shapes("lora_backward", x, x_adapter, dy, layer.d_in(), layer.d_out());
    const std::size_t r = layer.rank;
    const std::size_t din = layer.d_in();
    const std::size_t dout = layer.d_out();
    const double s = layer.scaling();

    LoRAGrads gr{Matrix(r, din), Matrix(dout, r)};
    Vector du(r);
    for (std::size_t row = 0; row < x.rows(); ++row) {
        const Vector xa = row_of(x_adapter, row);
        const Vector u = matvec(layer.a, xa);
        for (std::size_t j = 0; j < dout; ++j) {
            const double dz = s * dy(row, j);
            for (std::size_t k = 0; k < r; ++k) gr.db(j, k) += dz * u[k];
        }
        for (std::size_t k = 0; k < r; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < dout; ++j)
                acc += layer.b(j, k) * (s * dy(row, j));
            du[k] = acc;
        }
        for (std::size_t k = 0; k < r; ++k)
            for (std::size_t j = 0; j < din; ++j) gr.da(k, j) += du[k] * xa[j];
    }
    return gr;
}

MoELoRAGrads moelora_backward(const MoELoRALayer& layer, const Matrix& x,
                              const Matrix& dy) {
    return moelora_backward(layer, x, x, dy);
}

MoELoRAGrads moelora_backward(const MoELoRALayer& layer, const Matrix& x,
                              const Matrix& x_adapter, const Matrix& dy) {
    check_batch_shapes("moelora_backward", x, x_adapter, dy, layer.d_in(),
                       layer.d_out());
    const std::size_t n = layer.n_experts();
    const std::size_t r = layer.rank;
    const std::size_t din = layer.d_in();
    const std::size_t dout = layer.d_out();
    const double s = layer.scaling();

    MoELoRAGrads gr;
    for (std::size_t i = 0; i < n; ++i)
        gr.experts.push_back({Matrix(r, din), Matrix(dout, r)});
    gr.dwr = Matrix(n, din);

    Vector dg(n);
    Vector du(r);
    for (std::size_t row = 0; row < x.rows(); ++row) {
        const Vector xb = row_of(x, row);
        const Vector xa = row_of(x_adapter, row);
        const Vector g = softmax_stable(matvec(layer.wr, xb));
        for (std::size_t i = 0; i < n; ++i) {
            const Vector u = matvec(layer.experts[i].a, xa);
            const Vector z = matvec(layer.experts[i].b, u);
            double gate_grad = 0.0;
            for (std::size_t j = 0; j < dout; ++j) gate_grad += dy(row, j) * z[j];
            dg[i] = s * gate_grad;

            for (std::size_t j = 0; j < dout; ++j) {
                const double dz = s * g[i] * dy(row, j);
                for (std::size_t k = 0; k < r; ++k)
                    gr.experts[i].db(j, k) += dz * u[k];
            }
            for (std::size_t k = 0; k < r; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < dout; ++j)
                    acc += layer.experts[i].b(j, k) * (s * g[i] * dy(row, j));
                du[k] = acc;
            }
            for (std::size_t k = 0; k < r; ++k)
                for (std::size_t j = 0; j < din; ++j)
                    gr.experts[i].da(k, j) += du[k] * xa[j];
        }
        double inner = 0.0;
        for (std::size_t i = 0; i < n; ++i) inner += g[i] * dg[i];
        for (std::size_t i = 0; i < n; ++i) {
            const double dh = g[i] * (dg[i] - inner);
            for (std::size_t j = 0; j < din; ++j) gr.dwr(i, j) += dh * xb[j];
        }
    }
    return gr;
}

Vector finite_diff_check(const std::function<double(const Vector&)>& loss,
                         const Vector& params, double h) {
    require(h > 0.0, "finite_diff_check: step must be positive");
    Vector grad(params.size());
    Vector p = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + h;
        const double up = loss(p);
        p[i] = saved - h;
        const double down = loss(p);
        p[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw std::runtime_error(
                "finite_diff_check: non-finite loss at coordinate " +
                std::to_string(i));
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

Vector flatten_mor_params(const MoRLayer& layer) {
    Vector flat(numel(layer.a) + numel(layer.b) + numel(layer.omega_a) +
                numel(layer.omega_b) + numel(layer.wr));
    std::size_t pos = 0;
    pack(layer.a, flat, pos);
    pack(layer.b, flat, pos);
    pack(layer.omega_a, flat, pos);
    pack(layer.omega_b, flat, pos);
    pack(layer.wr, flat, pos);
    return flat;
}

void unflatten_mor_params(MoRLayer& layer, const Vector& flat) {
    const std::size_t want = numel(layer.a) + numel(layer.b) +
                             numel(layer.omega_a) + numel(layer.omega_b) +
                             numel(layer.wr);
    require(flat.size() == want,
            "unflatten_mor_params: got " + std::to_string(flat.size()) +
                " values, layer holds " + std::to_string(want));
    std::size_t pos = 0;
    unpack(layer.a, flat, pos);
    unpack(layer.b, flat, pos);
    unpack(layer.omega_a, flat, pos);
    unpack(layer.omega_b, flat, pos);
    unpack(layer.wr, flat, pos);
}

Vector flatten_lora_params(const LoRALayer& layer) {
    Vector flat(numel(layer.a) + numel(layer.b));
    std::size_t pos = 0;
    pack(layer.a, flat, pos);
    pack(layer.b, flat, pos);
    return flat;
}

void unflatten_lora_params(LoRALayer& layer, const Vector& flat) {
    const std::size_t want = numel(layer.a) + numel(layer.b);
    require(flat.size() == want,
            "unflatten_lora_params: got " + std::to_string(flat.size()) +
                " values, layer holds " + std::to_string(want));
    std::size_t pos = 0;
    unpack(layer.a, flat, pos);
    unpack(layer.b, flat, pos);
}

Vector flatten_moelora_params(const MoELoRALayer& layer) {
    std::size_t total = numel(layer.wr);
    for (const MoELoRAExpert& e : layer.experts) total += numel(e.a) + numel(e.b);
    Vector flat(total);
    std::size_t pos = 0;
    for (const MoELoRAExpert& e : layer.experts) {
        pack(e.a, flat, pos);
        pack(e.b, flat, pos);
    }
    pack(layer.wr, flat, pos);
    return flat;
}

void unflatten_moelora_params(MoELoRALayer& layer, const Vector& flat) {
    std::size_t want = numel(layer.wr);
    for (const MoELoRAExpert& e : layer.experts) want += numel(e.a) + numel(e.b);
    require(flat.size() == want,
            "unflatten_moelora_params: got " + std::to_string(flat.size()) +
                " values, layer holds " + std::to_string(want));
    std::size_t pos = 0;
    for (MoELoRAExpert& e : layer.experts) {
        unpack(e.a, flat, pos);
        unpack(e.b, flat, pos);
    }
    unpack(layer.wr, flat, pos);
}

GradReport check_mor_gradients(const MoRLayer& layer, const Matrix& x, double h,
                               double threshold) {
    MoRLayer work = layer;
    const auto loss_fn = [&work, &x](const Vector& p) {
        unflatten_mor_params(work, p);
        const MorBatchOutput out = mor_forward_stacked(work, x);
        double loss = 0.0;
        for (std::size_t i = 0; i < out.y.rows(); ++i)
            for (std::size_t j = 0; j < out.y.cols(); ++j)
                loss += out.y(i, j) * out.y(i, j);
        loss *= 0.5;
        if (work.router.type == RouterType::balanced)
            loss += work.router.aux_coefficient * balance_loss(out.gate);
        return loss;
    };

    const Vector p0 = flatten_mor_params(layer);
    const Vector numeric = finite_diff_check(loss_fn, p0, h);

    const MorBatchOutput out = mor_forward_stacked(layer, x);
    const MoRGrads grads = mor_backward(layer, x, out.y);
    Vector analytic(p0.size());
    std::size_t pos = 0;
    pack(grads.da, analytic, pos);
    pack(grads.db, analytic, pos);
    pack(grads.domega_a, analytic, pos);
    pack(grads.domega_b, analytic, pos);
    pack(grads.dwr, analytic, pos);

    const std::vector<Region> regions = {{"a", numel(grads.da)},
                                         {"b", numel(grads.db)},
                                         {"omega_a", numel(grads.domega_a)},
                                         {"omega_b", numel(grads.domega_b)},
                                         {"wr", numel(grads.dwr)}};
    return compare_regions(analytic, numeric, regions, threshold);
}

GradReport check_lora_gradients(const LoRALayer& layer, const Matrix& x, double h,
                                double threshold) {
    LoRALayer work = layer;
    const auto loss_fn = [&work, &x](const Vector& p) {
        unflatten_lora_params(work, p);
        const Matrix y = lora_forward_batch(work, x);
        double loss = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) loss += y(i, j) * y(i, j);
        return 0.5 * loss;
    };

    const Vector p0 = flatten_lora_params(layer);
    const Vector numeric = finite_diff_check(loss_fn, p0, h);

    const Matrix y = lora_forward_batch(layer, x);
    const LoRAGrads grads = lora_backward(layer, x, y);
    Vector analytic(p0.size());
    std::size_t pos = 0;
    pack(grads.da, analytic, pos);
    pack(grads.db, analytic, pos);

    const std::vector<Region> regions = {{"a", numel(grads.da)},
                                         {"b", numel(grads.db)}};
    return compare_regions(analytic, numeric, regions, threshold);
}

GradReport check_moelora_gradients(const MoELoRALayer& layer, const Matrix& x,
                                   double h, double threshold) {
    MoELoRALayer work = layer;
    const auto loss_fn = [&work, &x](const Vector& p) {
        unflatten_moelora_params(work, p);
        const MorBatchOutput out = moelora_forward_batch(work, x);
        double loss = 0.0;
        for (std::size_t i = 0; i < out.y.rows(); ++i)
            for (std::size_t j = 0; j < out.y.cols(); ++j)
                loss += out.y(i, j) * out.y(i, j);
        return 0.5 * loss;
    };

    const Vector p0 = flatten_moelora_params(layer);
    const Vector numeric = finite_diff_check(loss_fn, p0, h);

    const MorBatchOutput out = moelora_forward_batch(layer, x);
    const MoELoRAGrads grads = moelora_backward(layer, x, out.y);
    Vector analytic(p0.size());
    std::size_t pos = 0;
    for (const MoELoRAExpertGrads& e : grads.experts) {
        pack(e.da, analytic, pos);
        pack(e.db, analytic, pos);
    }
    pack(grads.dwr, analytic, pos);

    std::vector<Region> regions;
    for (std::size_t i = 0; i < grads.experts.size(); ++i) {
        regions.push_back({"expert" + std::to_string(i) + ".a",
                           numel(grads.experts[i].da)});
        regions.push_back({"expert" + std::to_string(i) + ".b",
                           numel(grads.experts[i].db)});
    }
    regions.push_back({"wr", numel(grads.dwr)});
    return compare_regions(analytic, numeric, regions, threshold);
}

}  // namespace mor
