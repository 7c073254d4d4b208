#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "mor/adapters.hpp"
#include "mor/bench.hpp"
#include "mor/grads.hpp"
#include "mor/matrix.hpp"
#include "mor/rng.hpp"

using namespace mor;

namespace {

Vector row_of(const Matrix& m, std::size_t i) {
    Vector v(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) v[j] = m(i, j);
    return v;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("teacher construction is deterministic and task-dependent") {
    TeacherSpec t1 = make_teacher(12, 8, 3, 3, 4, 16.0, 77);
    TeacherSpec t2 = make_teacher(12, 8, 3, 3, 4, 16.0, 77);
    CHECK(max_abs_diff(t1.w, t2.w) == 0.0);
    CHECK(max_abs_diff(t1.a_star, t2.a_star) == 0.0);
    CHECK(max_abs_diff(t1.b_star, t2.b_star) == 0.0);
    CHECK(max_abs_diff(t1.task_a, t2.task_a) == 0.0);

    TeacherSpec other = make_teacher(12, 8, 3, 3, 4, 16.0, 78);
    CHECK(max_abs_diff(t1.w, other.w) > 0.0);

    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(t1.task_a(k, j) >= 0.5);
            CHECK(t1.task_a(k, j) <= 1.5);
        }

    Vector x(12);
    x[5] = 1.0;
    x[9] = -2.0;
    double spread = 0.0;
    for (std::size_t k = 1; k < 3; ++k)
        spread = std::max(spread, max_abs_diff(teacher_apply(t1, 0, x),
                                               teacher_apply(t1, k, x)));
    CHECK(spread > 0.0);
    CHECK_THROWS_AS(teacher_apply(t1, 3, x), std::out_of_range);
}

TEST_CASE("sampled batches carry the task tag and teacher targets") {
    TeacherSpec teacher = make_teacher(10, 6, 2, 3, 4, 8.0, 5);
    RngState rng(99);
    Batch batch = sample_batch(teacher, 2, 7, rng);
    REQUIRE(batch.x.rows() == 7);
    for (std::size_t row = 0; row < 7; ++row) {
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(batch.x(row, j) == (j == 2 ? 1.0 : 0.0));
        Vector want = teacher_apply(teacher, 2, row_of(batch.x, row));
        CHECK(max_abs_diff(row_of(batch.y, row), want) == 0.0);
    }
    CHECK_THROWS_AS(sample_batch(teacher, 3, 2, rng), std::out_of_range);
}

TEST_CASE("teacher targets match the dense per-task update oracle") {
    TeacherSpec teacher = make_teacher(9, 7, 3, 2, 3, 12.0, 6);
    RngState rng(100);
    for (std::size_t k = 0; k < 2; ++k) {
        Matrix delta = scale(matmul(scale_rows(teacher.b_star, row_of(teacher.task_b, k)),
                                    scale_rows(teacher.a_star, row_of(teacher.task_a, k))),
                             teacher.scaling());
        Matrix dense = add(teacher.w, delta);
        for (int t = 0; t < 5; ++t) {
            Vector x = rng_gaussian_vector(rng, 9, 0.0, 1.0);
            CHECK(max_abs_diff(teacher_apply(teacher, k, x), matvec(dense, x)) < 1e-12);
        }
    }
}

TEST_CASE("tag-only inputs make targets constant across a batch") {
    TeacherSpec teacher = make_teacher(4, 5, 2, 3, 4, 8.0, 7);
    RngState rng(101);
    Batch batch = sample_batch(teacher, 1, 6, rng);
    for (std::size_t row = 1; row < 6; ++row)
        CHECK(max_abs_diff(row_of(batch.y, row), row_of(batch.y, 0)) == 0.0);
}

TEST_CASE("adam step fixtures") {
    TrainConfig config;
    config.learning_rate = 0.1;

    Vector params{1.0, -2.0};
    AdamState state;
    adam_step(params, Vector{0.0, 0.0}, state, config);
    CHECK(params[0] == 1.0);
    CHECK(params[1] == -2.0);

    // Bias-corrected first step moves by about lr in the gradient's
    // sign direction when |g| >> epsilon.
    Vector p2{0.0, 0.0};
    AdamState s2;
    adam_step(p2, Vector{100.0, -50.0}, s2, config);
    CHECK(p2[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(p2[1] == doctest::Approx(0.1).epsilon(1e-6));

    // Minimizing |p|^2/2 (gradient = p): the normalized update is about
    // lr * sign(p), so descent stays monotone only while |p| >> lr.
    TrainConfig small;
    small.learning_rate = 5e-3;
    Vector p3{1.0, 1.0};
    AdamState s3;
    double prev = p3.norm();
    for (int t = 0; t < 100; ++t) {
        adam_step(p3, p3, s3, small);
        CHECK(p3.norm() < prev);
        prev = p3.norm();
    }
}

TEST_CASE("sgd step is the exact scaled subtraction") {
    TrainConfig config;
    config.optimizer = Optimizer::sgd;
    config.learning_rate = 0.5;
    Vector params{1.0, -1.0};
    sgd_step(params, Vector{0.25, 0.5}, config);
    CHECK(params[0] == 0.875);
    CHECK(params[1] == -1.25);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    TeacherSpec teacher = make_teacher(8, 6, 2, 2, 2, 8.0, 11);
    RngState init(3);
    MoRLayer student = make_mor_layer(Matrix(6, 8), 2, 2, 8.0,
                                      RouterKind::learnable(), init);
    TrainConfig config;
    config.learning_rate = 0.0;
    config.steps = 120;
    config.batch = 4;
    config.seed = 5;
    config.log_every = 40;
    config.n_eval = 8;
    Vector before = flatten_mor_params(student);
    TrainReport report = train_student(teacher, student, config);
    CHECK(max_abs_diff(flatten_mor_params(student), before) == 0.0);
    REQUIRE(report.eval_errors.size() >= 2);
    for (double e : report.eval_errors) CHECK(e == report.eval_errors[0]);
    CHECK(max_abs_diff(student.w, teacher.w) == 0.0);
}

TEST_CASE("untrained student scores exactly one") {
    TeacherSpec teacher = make_teacher(10, 6, 2, 3, 4, 8.0, 13);
    RngState init(4);
    MoRLayer student = make_mor_layer(teacher.w, 3, 2, 8.0,
                                      RouterKind::learnable(), init);
    RngState eval_rng(55);
    CHECK(eval_task_error(student, teacher, 0, 16, eval_rng) == 1.0);

    LoRALayer lora = make_lora_layer(teacher.w, 2, 8.0, init);
    RngState eval2(55);
    CHECK(eval_task_error(lora, teacher, 1, 16, eval2) == 1.0);
}

TEST_CASE("student carrying the teacher parameters scores near zero") {
    TeacherSpec teacher = make_teacher(8, 6, 2, 1, 1, 8.0, 17);
    RngState init(5);
    LoRALayer student = make_lora_layer(teacher.w, 2, 8.0, init);
    student.a = scale_rows(teacher.a_star, row_of(teacher.task_a, 0));
    student.b = scale_rows(teacher.b_star, row_of(teacher.task_b, 0));
    RngState eval_rng(56);
    CHECK(eval_task_error(student, teacher, 0, 16, eval_rng) < 1e-12);
}

TEST_CASE("single-task shared-pair recovery") {
    // Teacher and student share the hypothesis class, so a short Adam run
    // should pull the relative error under 1%.
    TeacherSpec teacher = make_teacher(8, 6, 2, 1, 1, 8.0, 19);
    RngState init(6);
    LoRALayer student = make_lora_layer(teacher.w, 2, 8.0, init);
    TrainConfig config;
    config.learning_rate = 5e-3;
    config.steps = 2000;
    config.batch = 8;
    config.dropout = 0.0;
    config.seed = 21;
    config.n_eval = 32;
    TrainReport report = train_student(teacher, student, config);
    REQUIRE(report.task_errors.size() == 1);
    CHECK(report.task_errors[0] < 0.01);
}

TEST_CASE("training is bitwise deterministic") {
    TeacherSpec teacher = make_teacher(8, 6, 2, 2, 2, 8.0, 23);
    TrainConfig config;
    config.steps = 60;
    config.batch = 4;
    config.seed = 9;
    config.log_every = 20;
    config.n_eval = 8;

    RngState i1(7);
    MoRLayer s1 = make_mor_layer(Matrix(6, 8), 2, 2, 8.0, RouterKind::learnable(), i1);
    RngState i2(7);
    MoRLayer s2 = make_mor_layer(Matrix(6, 8), 2, 2, 8.0, RouterKind::learnable(), i2);

    TrainReport r1 = train_student(teacher, s1, config);
    TrainReport r2 = train_student(teacher, s2, config);
    REQUIRE(r1.losses.size() == r2.losses.size());
    for (std::size_t i = 0; i < r1.losses.size(); ++i) {
        CHECK(r1.losses[i] == r2.losses[i]);
        CHECK(r1.eval_errors[i] == r2.eval_errors[i]);
    }
    CHECK(max_abs_diff(flatten_mor_params(s1), flatten_mor_params(s2)) == 0.0);
    CHECK(max_abs_diff(r1.router_mass, r2.router_mass) == 0.0);
}

TEST_CASE("train_student validates its inputs") {
    TeacherSpec teacher = make_teacher(8, 6, 2, 3, 3, 8.0, 29);
    RngState init(8);
    MoRLayer student = make_mor_layer(Matrix(6, 8), 2, 2, 8.0,
                                      RouterKind::learnable(), init);
    TrainConfig config;
    config.batch = 2;  // fewer rows than tasks
    config.steps = 10;
    CHECK_THROWS_AS(train_student(teacher, student, config), std::invalid_argument);

    MoRLayer wrong = make_mor_layer(Matrix(6, 9), 2, 2, 8.0,
                                    RouterKind::learnable(), init);
    TrainConfig ok;
    ok.steps = 10;
    ok.batch = 4;
    CHECK_THROWS_AS(train_student(teacher, wrong, ok), std::invalid_argument);
}

TEST_CASE("router report rows live on the simplex") {
    TeacherSpec teacher = make_teacher(10, 6, 2, 3, 4, 8.0, 31);
    RngState init(9);
    MoRLayer student = make_mor_layer(teacher.w, 4, 2, 8.0,
                                      RouterKind::learnable(), init);
    student.wr = rng_gaussian_matrix(init, 4, 10, 0.0, 1.0);
    RngState rng(60);
    Matrix mass = router_report(student, teacher, 16, rng);
    REQUIRE(mass.rows() == 3);
    REQUIRE(mass.cols() == 4);
    for (std::size_t k = 0; k < 3; ++k) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 4; ++i) sum += mass(k, i);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    student.router = RouterKind::mean_pool();
    RngState rng2(60);
    Matrix uniform = router_report(student, teacher, 16, rng2);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 4; ++i) CHECK(uniform(k, i) == 0.25);

    MoRLayer solo = make_mor_layer(teacher.w, 1, 2, 8.0, RouterKind::learnable(), init);
    RngState rng3(61);
    Matrix ones = router_report(solo, teacher, 8, rng3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(ones(k, 0) == 1.0);
}

TEST_CASE("report files carry the logged curve") {
    TeacherSpec teacher = make_teacher(8, 6, 2, 2, 2, 8.0, 37);
    RngState init(10);
    MoRLayer student = make_mor_layer(Matrix(6, 8), 2, 2, 8.0,
                                      RouterKind::learnable(), init);
    TrainConfig config;
    config.steps = 40;
    config.batch = 4;
    config.seed = 11;
    config.log_every = 20;
    config.n_eval = 8;
    TrainReport report = train_student(teacher, student, config);

    std::string csv = temp_path("mor_test_loss.csv");
    write_loss_csv(csv, report);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,loss");
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == report.losses.size());

    std::string json = temp_path("mor_test_report.json");
    write_report_json(json, report);
    std::ifstream jin(json);
    std::stringstream buf;
    buf << jin.rdbuf();
    CHECK(buf.str().find("task_errors") != std::string::npos);
    CHECK(buf.str().find("router_mass") != std::string::npos);

    std::remove(csv.c_str());
    std::remove(json.c_str());
}
