#include "mor/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "mor/grads.hpp"

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

Vector pack_grads(const MoRGrads& g) {
    std::size_t total = g.da.rows() * g.da.cols() + g.db.rows() * g.db.cols() +
                        g.domega_a.rows() * g.domega_a.cols() +
                        g.domega_b.rows() * g.domega_b.cols() +
                        g.dwr.rows() * g.dwr.cols();
    Vector flat(total);
    std::size_t pos = 0;
    const auto put = [&flat, &pos](const Matrix& m) {
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) flat[pos++] = m(i, j);
    };
    put(g.da);
    put(g.db);
    put(g.domega_a);
    put(g.domega_b);
    put(g.dwr);
    return flat;
}

Vector pack_grads(const LoRAGrads& g) {
    Vector flat(g.da.rows() * g.da.cols() + g.db.rows() * g.db.cols());
    std::size_t pos = 0;
    const auto put = [&flat, &pos](const Matrix& m) {
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) flat[pos++] = m(i, j);
    };
    put(g.da);
    put(g.db);
    return flat;
}

Vector pack_grads(const MoELoRAGrads& g) {
    std::size_t total = g.dwr.rows() * g.dwr.cols();
    for (const MoELoRAExpertGrads& e : g.experts)
        total += e.da.rows() * e.da.cols() + e.db.rows() * e.db.cols();
    Vector flat(total);
    std::size_t pos = 0;
    const auto put = [&flat, &pos](const Matrix& m) {
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) flat[pos++] = m(i, j);
    };
    for (const MoELoRAExpertGrads& e : g.experts) {
        put(e.da);
        put(e.db);
    }
    put(g.dwr);
    return flat;
}

std::size_t gates_width(const MoRLayer& layer) { return layer.n_experts; }
std::size_t gates_width(const MoELoRALayer& layer) { return layer.n_experts(); }

Matrix forward_eval(const MoRLayer& layer, const Matrix& x, Matrix* gates) {
    const MorBatchOutput out = mor_forward_stacked(layer, x);
    if (gates) *gates = out.gate;
    return out.y;
}

Matrix forward_eval(const MoELoRALayer& layer, const Matrix& x, Matrix* gates) {
    const MorBatchOutput out = moelora_forward_batch(layer, x);
    if (gates) *gates = out.gate;
    return out.y;
}

Matrix forward_eval(const LoRALayer& layer, const Matrix& x, Matrix* gates) {
    if (gates) *gates = Matrix(0, 0);
    return lora_forward_batch(layer, x);
}

// ||Y_student - Y*||_F / ||Y* - X W^T||_F with the base taken from the
// teacher, so an all-zero adapter scores exactly 1.
template <typename Layer>
double rel_error_on(const Layer& student, const TeacherSpec& teacher,
                    const Batch& batch) {
    const Matrix ys = forward_eval(student, batch.x, nullptr);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < batch.x.rows(); ++i) {
        const Vector base = matvec(teacher.w, row_of(batch.x, i));
        for (std::size_t j = 0; j < batch.y.cols(); ++j) {
            const double dn = ys(i, j) - batch.y(i, j);
            const double dd = batch.y(i, j) - base[j];
            num += dn * dn;
            den += dd * dd;
        }
    }
    if (den == 0.0)
        throw std::runtime_error("eval_task_error: teacher adapter output is zero");
    return std::sqrt(num) / std::sqrt(den);
}

template <typename Layer>
Vector flatten_params(const Layer& layer) {
    if constexpr (std::is_same_v<Layer, MoRLayer>)
        return flatten_mor_params(layer);
    else if constexpr (std::is_same_v<Layer, LoRALayer>)
        return flatten_lora_params(layer);
    else
        return flatten_moelora_params(layer);
}

template <typename Layer>
void unflatten_params(Layer& layer, const Vector& flat) {
    if constexpr (std::is_same_v<Layer, MoRLayer>)
        unflatten_mor_params(layer, flat);
    else if constexpr (std::is_same_v<Layer, LoRALayer>)
        unflatten_lora_params(layer, flat);
    else
        unflatten_moelora_params(layer, flat);
}

template <typename Layer>
TrainReport train_core(const TeacherSpec& teacher, Layer& student,
                       const TrainConfig& config) {
    require(student.d_in() == teacher.d_in && student.d_out() == teacher.d_out,
            "train_student: student " + std::to_string(student.d_in()) + "x" +
                std::to_string(student.d_out()) + " vs teacher " +
                std::to_string(teacher.d_in) + "x" + std::to_string(teacher.d_out));
    require(config.learning_rate >= 0.0, "train_student: negative learning rate");
    require(config.batch >= teacher.tasks,
            "train_student: batch " + std::to_string(config.batch) +
                " smaller than task count " + std::to_string(teacher.tasks));
    require(config.dropout >= 0.0 && config.dropout < 1.0,
            "train_student: dropout must lie in [0, 1)");
    require(config.log_every >= 1, "train_student: log_every must be >= 1");
    require(config.n_eval >= 1, "train_student: n_eval must be >= 1");

    student.w = teacher.w;

    const std::size_t tasks = teacher.tasks;
    const std::size_t batch = config.batch;
    const std::size_t dout = teacher.d_out;

    RngState root(config.seed);
    RngState eval_rng = root.fork(1);
    RngState train_rng = root.fork(2);

    // One fixed eval batch per task; reused at every logged step so the
    // error curve is comparable across checkpoints.
    std::vector<Batch> eval_sets;
    for (std::size_t k = 0; k < tasks; ++k)
        eval_sets.push_back(sample_batch(teacher, k, config.n_eval, eval_rng));

    // batch rows split evenly over tasks, remainder to the lowest ids.
    std::vector<std::size_t> rows_per_task(tasks, batch / tasks);
    for (std::size_t k = 0; k < batch % tasks; ++k) rows_per_task[k] += 1;

    Vector params = flatten_params(student);
    AdamState adam;

    TrainReport report;
    const auto mean_eval_error = [&]() {
        double total = 0.0;
        for (std::size_t k = 0; k < tasks; ++k)
            total += rel_error_on(student, teacher, eval_sets[k]);
        return total / static_cast<double>(tasks);
    };

    Matrix x(batch, teacher.d_in);
    Matrix ystar(batch, dout);
    Matrix dy(batch, dout);
    for (std::size_t step = 0; step < config.steps; ++step) {
        std::size_t row0 = 0;
        for (std::size_t k = 0; k < tasks; ++k) {
            const Batch b = sample_batch(teacher, k, rows_per_task[k], train_rng);
            for (std::size_t i = 0; i < rows_per_task[k]; ++i) {
                for (std::size_t j = 0; j < teacher.d_in; ++j)
                    x(row0 + i, j) = b.x(i, j);
                for (std::size_t j = 0; j < dout; ++j)
                    ystar(row0 + i, j) = b.y(i, j);
            }
            row0 += rows_per_task[k];
        }

        Matrix x_adapter = x;
        if (config.dropout > 0.0) {
            const double keep_scale = 1.0 / (1.0 - config.dropout);
            for (std::size_t i = 0; i < batch; ++i)
                for (std::size_t j = 0; j < teacher.d_in; ++j)
                    x_adapter(i, j) = train_rng.next_uniform() < config.dropout
                                          ? 0.0
                                          : x(i, j) * keep_scale;
        }

        double loss = 0.0;
        Matrix gates(0, 0);
        Matrix y(0, 0);
        if constexpr (std::is_same_v<Layer, MoRLayer>) {
            const MorBatchOutput out = mor_forward_stacked(student, x, x_adapter);
            y = out.y;
            gates = out.gate;
        } else if constexpr (std::is_same_v<Layer, MoELoRALayer>) {
            const MorBatchOutput out = moelora_forward_batch(student, x, x_adapter);
            y = out.y;
            gates = out.gate;
        } else {
            y = lora_forward_batch(student, x, x_adapter);
        }

        const double denom = static_cast<double>(batch * dout);
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t j = 0; j < dout; ++j) {
                const double d = y(i, j) - ystar(i, j);
                loss += d * d;
                dy(i, j) = 2.0 * d / denom;
            }
        loss /= denom;
        if constexpr (std::is_same_v<Layer, MoRLayer>) {
            if (student.router.type == RouterType::balanced)
                loss += student.router.aux_coefficient * balance_loss(gates);
        }

        if (!std::isfinite(loss))
            throw std::runtime_error("train_student: non-finite loss at step " +
                                     std::to_string(step));

        if (step % config.log_every == 0) {
            report.loss_steps.push_back(step);
            report.losses.push_back(loss);
            report.eval_errors.push_back(mean_eval_error());
        }

        Vector grads(0);
        if constexpr (std::is_same_v<Layer, MoRLayer>)
            grads = pack_grads(mor_backward(student, x, x_adapter, dy));
        else if constexpr (std::is_same_v<Layer, MoELoRALayer>)
            grads = pack_grads(moelora_backward(student, x, x_adapter, dy));
        else
            grads = pack_grads(lora_backward(student, x, x_adapter, dy));

        if (config.optimizer == Optimizer::adam)
            adam_step(params, grads, adam, config);
        else
            sgd_step(params, grads, config);
        unflatten_params(student, params);
    }

    for (std::size_t k = 0; k < tasks; ++k)
        report.task_errors.push_back(rel_error_on(student, teacher, eval_sets[k]));

    if constexpr (!std::is_same_v<Layer, LoRALayer>) {
        const std::size_t n = gates_width(student);
        report.router_mass = Matrix(tasks, n);
        for (std::size_t k = 0; k < tasks; ++k) {
            Matrix g(0, 0);
            forward_eval(student, eval_sets[k].x, &g);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < n; ++j)
                    report.router_mass(k, j) += g(i, j);
            for (std::size_t j = 0; j < n; ++j)
                report.router_mass(k, j) /= static_cast<double>(g.rows());
        }
    } else {
        report.router_mass = Matrix(0, 0);
    }
    return report;
}

}  // namespace

TeacherSpec make_teacher(std::size_t d_in, std::size_t d_out, std::size_t rank,
                         std::size_t tasks, std::size_t tag_width, double alpha,
                         std::uint64_t seed) {
    require(tasks >= 1, "make_teacher: need at least one task");
    require(tasks <= tag_width && tag_width <= d_in,
            "make_teacher: need tasks <= tag_width <= d_in, got " +
                std::to_string(tasks) + " / " + std::to_string(tag_width) + " / " +
                std::to_string(d_in));
    require(rank >= 1 && rank <= std::min(d_in, d_out),
            "make_teacher: rank must satisfy 1 <= r <= min(d_in, d_out)");

    TeacherSpec t;
    t.d_in = d_in;
    t.d_out = d_out;
    t.rank = rank;
    t.tasks = tasks;
    t.tag_width = tag_width;
    t.alpha = alpha;

    RngState rng(seed);
    t.w = rng_gaussian_matrix(rng, d_out, d_in,
                              0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
    t.a_star = rng_gaussian_matrix(rng, rank, d_in,
                                   0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
    t.b_star = rng_gaussian_matrix(rng, d_out, rank,
                                   0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
    t.task_a = Matrix(tasks, rank);
    for (std::size_t k = 0; k < tasks; ++k)
        for (std::size_t i = 0; i < rank; ++i)
            t.task_a(k, i) = rng.next_uniform(0.5, 1.5);
    t.task_b = Matrix(tasks, d_out);
    for (std::size_t k = 0; k < tasks; ++k)
        for (std::size_t j = 0; j < d_out; ++j)
            t.task_b(k, j) = rng.next_uniform(0.5, 1.5);
    return t;
}

Vector teacher_apply(const TeacherSpec& teacher, std::size_t task, const Vector& x) {
    if (task >= teacher.tasks)
        throw std::out_of_range("teacher_apply: task " + std::to_string(task) +
                                " out of range, K=" + std::to_string(teacher.tasks));
    require(x.size() == teacher.d_in,
            "teacher_apply: input size " + std::to_string(x.size()) + " vs d_in " +
                std::to_string(teacher.d_in));
    Vector u = matvec(teacher.a_star, x);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] *= teacher.task_a(task, i);
    const Vector z = matvec(teacher.b_star, u);
    Vector y = matvec(teacher.w, x);
    const double s = teacher.scaling();
    for (std::size_t j = 0; j < y.size(); ++j)
        y[j] += s * (teacher.task_b(task, j) * z[j]);
    return y;
}

Batch sample_batch(const TeacherSpec& teacher, std::size_t task, std::size_t n,
                   RngState& rng) {
    if (task >= teacher.tasks)
        throw std::out_of_range("sample_batch: task " + std::to_string(task) +
                                " out of range, K=" + std::to_string(teacher.tasks));
    require(n >= 1, "sample_batch: need at least one row");
    Batch batch{Matrix(n, teacher.d_in), Matrix(n, teacher.d_out)};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < teacher.tag_width; ++j)
            batch.x(i, j) = (j == task) ? 1.0 : 0.0;
        for (std::size_t j = teacher.tag_width; j < teacher.d_in; ++j)
            batch.x(i, j) = rng.next_gaussian(0.0, 1.0);
        const Vector y = teacher_apply(teacher, task, row_of(batch.x, i));
        for (std::size_t j = 0; j < teacher.d_out; ++j) batch.y(i, j) = y[j];
    }
    return batch;
}

void adam_step(Vector& params, const Vector& grads, AdamState& state,
               const TrainConfig& config) {
    require(params.size() == grads.size(),
            "adam_step: " + std::to_string(params.size()) + " params vs " +
                std::to_string(grads.size()) + " grads");
    if (state.m.size() == 0) {
        state.m = Vector(params.size());
        state.v = Vector(params.size());
    }
    require(state.m.size() == params.size(),
            "adam_step: state sized for " + std::to_string(state.m.size()) +
                " params, got " + std::to_string(params.size()));
    state.step += 1;
    state.beta1_pow *= config.beta1;
    state.beta2_pow *= config.beta2;
    const double c1 = 1.0 - state.beta1_pow;
    const double c2 = 1.0 - state.beta2_pow;
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
        state.v[i] =
            config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

void sgd_step(Vector& params, const Vector& grads, const TrainConfig& config) {
    require(params.size() == grads.size(),
            "sgd_step: " + std::to_string(params.size()) + " params vs " +
                std::to_string(grads.size()) + " grads");
    for (std::size_t i = 0; i < params.size(); ++i)
        params[i] -= config.learning_rate * grads[i];
}

TrainReport train_student(const TeacherSpec& teacher, MoRLayer& student,
                          const TrainConfig& config) {
    return train_core(teacher, student, config);
}

TrainReport train_student(const TeacherSpec& teacher, LoRALayer& student,
                          const TrainConfig& config) {
    return train_core(teacher, student, config);
}

TrainReport train_student(const TeacherSpec& teacher, MoELoRALayer& student,
                          const TrainConfig& config) {
    return train_core(teacher, student, config);
}

double eval_task_error(const MoRLayer& student, const TeacherSpec& teacher,
                       std::size_t task, std::size_t n_eval, RngState& rng) {
    return rel_error_on(student, teacher, sample_batch(teacher, task, n_eval, rng));
}

double eval_task_error(const LoRALayer& student, const TeacherSpec& teacher,
                       std::size_t task, std::size_t n_eval, RngState& rng) {
    return rel_error_on(student, teacher, sample_batch(teacher, task, n_eval, rng));
}

double eval_task_error(const MoELoRALayer& student, const TeacherSpec& teacher,
                       std::size_t task, std::size_t n_eval, RngState& rng) {
    return rel_error_on(student, teacher, sample_batch(teacher, task, n_eval, rng));
}

Matrix router_report(const MoRLayer& student, const TeacherSpec& teacher,
                     std::size_t n_per_task, RngState& rng) {
    require(n_per_task >= 1, "router_report: need at least one row per task");
    Matrix mass(teacher.tasks, student.n_experts);
    for (std::size_t k = 0; k < teacher.tasks; ++k) {
        const Batch batch = sample_batch(teacher, k, n_per_task, rng);
        for (std::size_t i = 0; i < n_per_task; ++i) {
            const Vector g = router_weights(student, row_of(batch.x, i));
            for (std::size_t j = 0; j < student.n_experts; ++j) mass(k, j) += g[j];
        }
        for (std::size_t j = 0; j < student.n_experts; ++j)
            mass(k, j) /= static_cast<double>(n_per_task);
    }
    return mass;
}

void write_loss_csv(const std::string& path, const TrainReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_loss_csv: cannot open " + path);
    out << "step,loss\n";
    out.precision(17);
    for (std::size_t i = 0; i < report.loss_steps.size(); ++i)
        out << report.loss_steps[i] << "," << report.losses[i] << "\n";
    if (!out) throw std::runtime_error("write_loss_csv: write failed for " + path);
}

void write_report_json(const std::string& path, const TrainReport& report) {
    nlohmann::json j;
    j["task_errors"] = report.task_errors;
    j["eval_steps"] = report.loss_steps;
    j["eval_errors"] = report.eval_errors;
    std::vector<std::vector<double>> mass;
    for (std::size_t i = 0; i < report.router_mass.rows(); ++i) {
        std::vector<double> row;
        for (std::size_t k = 0; k < report.router_mass.cols(); ++k)
            row.push_back(report.router_mass(i, k));
        mass.push_back(std::move(row));
    }
    j["router_mass"] = mass;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_report_json: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out)
        throw std::runtime_error("write_report_json: write failed for " + path);
}

}  // namespace mor
