#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mor/adapters.hpp"
#include "mor/matrix.hpp"
#include "mor/rng.hpp"

namespace mor {

// Multi-task linear teacher: every task shares the frozen base and the
// low-rank pair, and differs only by diagonal rescalings of that pair.
// Rows of task_a / task_b hold task k's scaling vectors. The first
// tag_width input coordinates one-hot encode the task id.
struct TeacherSpec {
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    std::size_t rank = 0;
    std::size_t tasks = 0;
    std::size_t tag_width = 0;
    double alpha = 32.0;
    Matrix w;       // d_out x d_in
    Matrix a_star;  // rank x d_in
    Matrix b_star;  // d_out x rank
    Matrix task_a;  // tasks x rank, entries in [0.5, 1.5]
    Matrix task_b;  // tasks x d_out, entries in [0.5, 1.5]

    double scaling() const { return alpha / static_cast<double>(rank); }
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
    Optimizer optimizer = Optimizer::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 2e-4;
    std::size_t steps = 20000;
    std::size_t batch = 8;
    double dropout = 0.05;
    RouterKind router = RouterKind::learnable();
    std::uint64_t seed = 0;
    std::size_t log_every = 50;
    std::size_t n_eval = 64;
};

struct TrainReport {
    std::vector<std::size_t> loss_steps;
    std::vector<double> losses;       // training-batch loss at each logged step
    std::vector<double> eval_errors;  // mean relative output error, fixed eval set
    std::vector<double> task_errors;  // final per-task relative output error
    Matrix router_mass;               // tasks x experts; 0x0 when there is no router
    std::string snapshot_path;
};

TeacherSpec make_teacher(std::size_t d_in, std::size_t d_out, std::size_t rank,
                         std::size_t tasks, std::size_t tag_width, double alpha,
                         std::uint64_t seed);

// Base output plus task k's rescaled low-rank update applied to x.
Vector teacher_apply(const TeacherSpec& teacher, std::size_t task, const Vector& x);

struct Batch {
    Matrix x;  // n x d_in
    Matrix y;  // n x d_out
};

// Rows are [one-hot(task) | gaussian noise]; targets come from teacher_apply.
Batch sample_batch(const TeacherSpec& teacher, std::size_t task, std::size_t n,
                   RngState& rng);

struct AdamState {
    Vector m;
    Vector v;
    std::size_t step = 0;
    double beta1_pow = 1.0;  // running beta^step, avoids pow in the loop
    double beta2_pow = 1.0;
};

void adam_step(Vector& params, const Vector& grads, AdamState& state,
               const TrainConfig& config);
void sgd_step(Vector& params, const Vector& grads, const TrainConfig& config);

// Minimizes batch MSE to the teacher over uniformly mixed task batches
// (plus the load penalty when the layer routes with a balance term).
// Mutates the student in place; the student's frozen base is overwritten
// with the teacher's. Throws std::runtime_error naming the step if the
// loss goes non-finite.
TrainReport train_student(const TeacherSpec& teacher, MoRLayer& student,
                          const TrainConfig& config);
TrainReport train_student(const TeacherSpec& teacher, LoRALayer& student,
                          const TrainConfig& config);
TrainReport train_student(const TeacherSpec& teacher, MoELoRALayer& student,
                          const TrainConfig& config);

// ||Y_student - Y*||_F / ||Y* - X W^T||_F on a fresh task batch, so the
// error is measured against the adapter's contribution only.
double eval_task_error(const MoRLayer& student, const TeacherSpec& teacher,
                       std::size_t task, std::size_t n_eval, RngState& rng);
double eval_task_error(const LoRALayer& student, const TeacherSpec& teacher,
                       std::size_t task, std::size_t n_eval, RngState& rng);
double eval_task_error(const MoELoRALayer& student, const TeacherSpec& teacher,
                       std::size_t task, std::size_t n_eval, RngState& rng);

// Row k holds the mean router weights over n_per_task fresh task-k inputs.
Matrix router_report(const MoRLayer& student, const TeacherSpec& teacher,
                     std::size_t n_per_task, RngState& rng);

// step,loss,eval_error rows; one line per logged step.
void write_loss_csv(const std::string& path, const TrainReport& report);
// Final task errors and the router-mass matrix.
void write_report_json(const std::string& path, const TrainReport& report);

}  // namespace mor
