#include <cstddef>
#include <stdexcept>

#include "doctest.h"
#include "mor/adapters.hpp"
#include "mor/matrix.hpp"
#include "mor/rng.hpp"

using namespace mor;

namespace {

Matrix dense_diag(const Vector& v) {
    Matrix d(v.size(), v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d(i, i) = v[i];
    return d;
}

Vector row_of(const Matrix& m, std::size_t i) {
    Vector v(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) v[j] = m(i, j);
    return v;
}

MoRLayer random_mor(RngState& rng, std::size_t d_in, std::size_t d_out,
                    std::size_t r, std::size_t n, RouterKind router) {
    MoRLayer layer = make_mor_layer(rng_gaussian_matrix(rng, d_out, d_in, 0.0, 0.5),
                                    n, r, 16.0, router, rng);
    layer.b = rng_gaussian_matrix(rng, d_out, r, 0.0, 0.5);
    layer.omega_a = rng_gaussian_matrix(rng, n, r, 1.0, 0.4);
    layer.omega_b = rng_gaussian_matrix(rng, n, d_out, 1.0, 0.4);
    layer.wr = rng_gaussian_matrix(rng, n, d_in, 0.0, 0.6);
    return layer;
}

}  // namespace

TEST_CASE("initialization starts the update at zero") {
    RngState rng(21);
    LoRALayer lora = make_lora_layer(rng_gaussian_matrix(rng, 5, 6, 0.0, 1.0), 3,
                                     32.0, rng);
    CHECK(lora.b.max_abs() == 0.0);
    CHECK(lora.a.max_abs() > 0.0);
    CHECK(lora.rank == 3);

    MoRLayer layer = make_mor_layer(rng_gaussian_matrix(rng, 5, 6, 0.0, 1.0), 4, 3,
                                    32.0, RouterKind::learnable(), rng);
    CHECK(layer.b.max_abs() == 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(layer.omega_a(i, j) == 1.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(layer.omega_b(i, j) == 1.0);
    CHECK(layer.wr.max_abs() > 0.0);
    CHECK(layer.wr.max_abs() < 0.2);

    Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
    CHECK(max_abs_diff(mor_forward(layer, x).y, matvec(layer.w, x)) == 0.0);
}

TEST_CASE("lora_forward with zero b is the frozen base") {
    RngState rng(22);
    LoRALayer layer = make_lora_layer(rng_gaussian_matrix(rng, 4, 7, 0.0, 1.0), 2,
                                      8.0, rng);
    Vector x = rng_gaussian_vector(rng, 7, 0.0, 1.0);
    CHECK(max_abs_diff(lora_forward(layer, x), matvec(layer.w, x)) == 0.0);
}

TEST_CASE("lora_forward identity composition truncates and embeds") {
    LoRALayer layer;
    layer.w = Matrix(4, 5);
    layer.a = Matrix(2, 5);
    layer.a(0, 0) = 1.0;
    layer.a(1, 1) = 1.0;
    layer.b = Matrix(4, 2);
    layer.b(0, 0) = 1.0;
    layer.b(1, 1) = 1.0;
    layer.alpha = 2.0;
    layer.rank = 2;
    Vector x{5, 6, 7, 8, 9};
    Vector y = lora_forward(layer, x);
    CHECK(y[0] == 5.0);
    CHECK(y[1] == 6.0);
    CHECK(y[2] == 0.0);
    CHECK(y[3] == 0.0);
}

TEST_CASE("lora_forward matches the dense delta-w oracle") {
    RngState rng(23);
    LoRALayer layer = make_lora_layer(rng_gaussian_matrix(rng, 6, 5, 0.0, 1.0), 3,
                                      12.0, rng);
    layer.b = rng_gaussian_matrix(rng, 6, 3, 0.0, 1.0);
    Matrix dense = add(layer.w, scale(matmul(layer.b, layer.a), layer.scaling()));
    Vector x = rng_gaussian_vector(rng, 5, 0.0, 1.0);
    CHECK(max_abs_diff(lora_forward(layer, x), matvec(dense, x)) < 1e-13);
}

TEST_CASE("expert direction reduces to lora under unit scalings") {
    RngState rng(24);
    MoRLayer layer = random_mor(rng, 6, 5, 3, 2, RouterKind::learnable());
    for (std::size_t j = 0; j < 3; ++j) layer.omega_a(0, j) = 1.0;
    for (std::size_t j = 0; j < 5; ++j) layer.omega_b(0, j) = 1.0;
    Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
    Vector lora_delta =
        scale(matvec(layer.b, matvec(layer.a, x)), layer.scaling());
    CHECK(max_abs_diff(mor_expert_apply(layer, 0, x), lora_delta) < 1e-13);
}

TEST_CASE("expert direction annihilated by zero omega_a row") {
    RngState rng(25);
    MoRLayer layer = random_mor(rng, 6, 5, 3, 2, RouterKind::learnable());
    for (std::size_t j = 0; j < 3; ++j) layer.omega_a(1, j) = 0.0;
    Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
    CHECK(mor_expert_apply(layer, 1, x).norm() == 0.0);
    CHECK_THROWS_AS(mor_expert_apply(layer, 2, x), std::out_of_range);
}

TEST_CASE("expert direction equals the explicit diagonal-matrix oracle") {
    RngState rng(26);
    MoRLayer layer = random_mor(rng, 7, 5, 4, 3, RouterKind::learnable());
    Vector x = rng_gaussian_vector(rng, 7, 0.0, 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
        Matrix di = matmul(dense_diag(row_of(layer.omega_b, i)),
                           matmul(layer.b, matmul(dense_diag(row_of(layer.omega_a, i)),
                                                  layer.a)));
        Vector want = scale(matvec(di, x), layer.scaling());
        CHECK(max_abs_diff(mor_expert_apply(layer, i, x), want) < 1e-13);
    }
}

TEST_CASE("router weights: mean pool, zero logits, explicit softmax") {
    RngState rng(27);
    MoRLayer layer = random_mor(rng, 6, 5, 3, 4, RouterKind::mean_pool());
    Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
    Vector g = router_weights(layer, x);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == 0.25);

    layer.router = RouterKind::learnable();
    layer.wr = Matrix(4, 6);
    Vector gz = router_weights(layer, x);
    for (std::size_t i = 0; i < 4; ++i) CHECK(gz[i] == doctest::Approx(0.25));

    layer.wr = rng_gaussian_matrix(rng, 4, 6, 0.0, 1.0);
    Vector gr = router_weights(layer, x);
    Vector want = softmax_stable(matvec(layer.wr, x));
    CHECK(max_abs_diff(gr, want) == 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < 4; ++i) sum += gr[i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("router argmax invariant under positive rescaling of wr") {
    RngState rng(28);
    MoRLayer layer = random_mor(rng, 6, 5, 3, 5, RouterKind::learnable());
    for (int t = 0; t < 20; ++t) {
        Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
        Vector g1 = router_weights(layer, x);
        MoRLayer scaled = layer;
        scaled.wr = scale(layer.wr, 3.7);
        Vector g2 = router_weights(scaled, x);
        std::size_t arg1 = 0, arg2 = 0;
        for (std::size_t i = 1; i < 5; ++i) {
            if (g1[i] > g1[arg1]) arg1 = i;
            if (g2[i] > g2[arg2]) arg2 = i;
        }
        CHECK(arg1 == arg2);
    }
}

TEST_CASE("single-expert forward ignores the router") {
    RngState rng(29);
    MoRLayer layer = random_mor(rng, 6, 5, 3, 1, RouterKind::learnable());
    Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
    MorOutput out = mor_forward(layer, x);
    CHECK(out.gate.size() == 1);
    CHECK(out.gate[0] == 1.0);
    Vector want = add(matvec(layer.w, x), mor_expert_apply(layer, 0, x));
    CHECK(max_abs_diff(out.y, want) < 1e-13);

    MoRLayer other = layer;
    other.wr = rng_gaussian_matrix(rng, 1, 6, 0.0, 5.0);
    CHECK(max_abs_diff(mor_forward(other, x).y, out.y) == 0.0);
}

TEST_CASE("identical experts make the mixture router-independent") {
    RngState rng(30);
    MoRLayer layer = random_mor(rng, 6, 5, 3, 4, RouterKind::learnable());
    for (std::size_t i = 1; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) layer.omega_a(i, j) = layer.omega_a(0, j);
        for (std::size_t j = 0; j < 5; ++j) layer.omega_b(i, j) = layer.omega_b(0, j);
    }
    Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
    Vector y1 = mor_forward(layer, x).y;
    layer.wr = rng_gaussian_matrix(rng, 4, 6, 0.0, 2.0);
    Vector y2 = mor_forward(layer, x).y;
    CHECK(max_abs_diff(y1, y2) < 1e-12);
}

TEST_CASE("mixture equals the per-expert loop oracle") {
    RngState rng(31);
    MoRLayer layer = random_mor(rng, 8, 6, 4, 3, RouterKind::learnable());
    Vector x = rng_gaussian_vector(rng, 8, 0.0, 1.0);
    MorOutput out = mor_forward(layer, x);
    Vector acc = matvec(layer.w, x);
    for (std::size_t i = 0; i < 3; ++i)
        acc = add(acc, scale(mor_expert_apply(layer, i, x), out.gate[i]));
    CHECK(max_abs_diff(out.y, acc) < 1e-12);
}

TEST_CASE("mixture output stays in the experts' componentwise hull") {
    RngState rng(32);
    for (int t = 0; t < 10; ++t) {
        MoRLayer layer = random_mor(rng, 6, 5, 3, 4, RouterKind::learnable());
        Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
        MorOutput out = mor_forward(layer, x);
        Vector base = matvec(layer.w, x);
        for (std::size_t c = 0; c < 5; ++c) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t i = 0; i < 4; ++i) {
                double v = base[c] + mor_expert_apply(layer, i, x)[c];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            CHECK(out.y[c] >= lo - 1e-12);
            CHECK(out.y[c] <= hi + 1e-12);
        }
    }
}

TEST_CASE("stacked forward agrees with the row loop") {
    RngState rng(33);
    MoRLayer layer = random_mor(rng, 9, 7, 4, 8, RouterKind::learnable());
    Matrix x = rng_gaussian_matrix(rng, 16, 9, 0.0, 1.0);
    MorBatchOutput batch = mor_forward_stacked(layer, x);
    for (std::size_t row = 0; row < 16; ++row) {
        MorOutput one = mor_forward(layer, row_of(x, row));
        for (std::size_t c = 0; c < 7; ++c)
            CHECK(std::abs(batch.y(row, c) - one.y[c]) < 1e-12);
        for (std::size_t i = 0; i < 8; ++i)
            CHECK(std::abs(batch.gate(row, i) - one.gate[i]) < 1e-12);
    }

    Matrix zero(3, 9);
    MoRLayer zl = layer;
    zl.w = Matrix(7, 9);
    CHECK(mor_forward_stacked(zl, zero).y.max_abs() == 0.0);
}

TEST_CASE("adapter-path input split leaves base and router on the clean input") {
    RngState rng(34);
    MoRLayer layer = random_mor(rng, 6, 5, 3, 4, RouterKind::learnable());
    Matrix x = rng_gaussian_matrix(rng, 5, 6, 0.0, 1.0);

    MorBatchOutput same = mor_forward_stacked(layer, x, x);
    MorBatchOutput plain = mor_forward_stacked(layer, x);
    CHECK(max_abs_diff(same.y, plain.y) == 0.0);
    CHECK(max_abs_diff(same.gate, plain.gate) == 0.0);

    MorBatchOutput masked = mor_forward_stacked(layer, x, Matrix(5, 6));
    CHECK(max_abs_diff(masked.y, matmul(x, layer.w.transpose())) == 0.0);
    CHECK(max_abs_diff(masked.gate, plain.gate) == 0.0);
}

TEST_CASE("moelora single expert equals plain lora") {
    RngState rng(35);
    MoELoRALayer moe = make_moelora_layer(rng_gaussian_matrix(rng, 5, 6, 0.0, 1.0),
                                          1, 3, 16.0, rng);
    moe.experts[0].b = rng_gaussian_matrix(rng, 5, 3, 0.0, 1.0);
    LoRALayer lora;
    lora.w = moe.w;
    lora.a = moe.experts[0].a;
    lora.b = moe.experts[0].b;
    lora.alpha = moe.alpha;
    lora.rank = moe.rank;
    Vector x = rng_gaussian_vector(rng, 6, 0.0, 1.0);
    MoELoRAOutput out = moelora_forward(moe, x);
    CHECK(out.gate[0] == 1.0);
    CHECK(max_abs_diff(out.y, lora_forward(lora, x)) < 1e-14);
}

TEST_CASE("moelora matches the dense soft-mixture oracle") {
    RngState rng(36);
    MoELoRALayer moe = make_moelora_layer(rng_gaussian_matrix(rng, 6, 7, 0.0, 1.0),
                                          3, 2, 8.0, rng);
    for (MoELoRAExpert& e : moe.experts)
        e.b = rng_gaussian_matrix(rng, 6, 2, 0.0, 1.0);
    moe.wr = rng_gaussian_matrix(rng, 3, 7, 0.0, 1.0);
    Vector x = rng_gaussian_vector(rng, 7, 0.0, 1.0);
    MoELoRAOutput out = moelora_forward(moe, x);
    Vector g = softmax_stable(matvec(moe.wr, x));
    Vector acc = matvec(moe.w, x);
    for (std::size_t i = 0; i < 3; ++i) {
        Matrix prod = matmul(moe.experts[i].b, moe.experts[i].a);
        acc = add(acc, scale(matvec(prod, x), g[i] * moe.scaling()));
    }
    CHECK(max_abs_diff(out.y, acc) < 1e-12);
    CHECK(max_abs_diff(out.gate, g) == 0.0);

    MorBatchOutput batch = moelora_forward_batch(moe, rng_gaussian_matrix(rng, 4, 7, 0.0, 1.0));
    CHECK(batch.y.rows() == 4);
    CHECK(batch.gate.cols() == 3);
}

TEST_CASE("balance loss fixtures") {
    Matrix uniform(6, 3, 1.0 / 3.0);
    CHECK(balance_loss(uniform) == doctest::Approx(1.0).epsilon(1e-12));

    Matrix collapsed(6, 3);
    for (std::size_t i = 0; i < 6; ++i) collapsed(i, 0) = 1.0;
    CHECK(balance_loss(collapsed) == doctest::Approx(3.0).epsilon(1e-12));

    Matrix spread(6, 2);
    for (std::size_t i = 0; i < 6; ++i) {
        spread(i, i % 2) = 0.75;
        spread(i, 1 - i % 2) = 0.25;
    }
    CHECK(balance_loss(spread) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(balance_loss(Matrix(0, 3)), std::invalid_argument);
}

TEST_CASE("diagonal scaling absorption identity") {
    RngState rng(37);
    Matrix b = rng_gaussian_matrix(rng, 6, 4, 0.0, 1.0);
    Matrix a = rng_gaussian_matrix(rng, 4, 8, 0.0, 1.0);
    Vector la = rng_gaussian_vector(rng, 4, 1.0, 0.5);
    Vector lb = rng_gaussian_vector(rng, 6, 1.0, 0.5);
    CHECK(highrank_transform_check(b, a, la, lb) < 1e-13);

    Vector ones_a(4, 1.0);
    Vector ones_b(6, 1.0);
    CHECK(highrank_transform_check(b, a, ones_a, ones_b) == 0.0);

    Vector zero_b(6, 0.0);
    CHECK(highrank_transform_check(b, a, la, zero_b) == 0.0);
}

TEST_CASE("scale_rows multiplies each row by its scalar") {
    Matrix m{{1, 2}, {3, 4}, {5, 6}};
    Matrix s = scale_rows(m, Vector{2, 0, -1});
    CHECK(s(0, 1) == 4.0);
    CHECK(s(1, 0) == 0.0);
    CHECK(s(2, 0) == -5.0);
    CHECK_THROWS_AS(scale_rows(m, Vector{1, 2}), std::invalid_argument);
}
