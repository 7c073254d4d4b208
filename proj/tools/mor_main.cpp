#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mor/accounting.hpp"
#include "mor/adapters.hpp"
#include "mor/bench.hpp"
#include "mor/checkpoint.hpp"
#include "mor/config.hpp"
#include "mor/rankops.hpp"
#include "mor/rng.hpp"
#include "mor/verify.hpp"

namespace {

std::string with_commas(std::uint64_t v) {
    std::string digits = std::to_string(v);
    std::string out;
    const std::size_t n = digits.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && (n - i) % 3 == 0) out += ',';
        out += digits[i];
    }
    return out;
}

std::string mega(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", static_cast<double>(v) / 1e6);
    return buf;
}

int cmd_verify() {
    bool all_pass = true;
    for (const mor::SuiteResult& suite : mor::run_verify_suites()) {
        std::cout << (suite.pass ? "[PASS] " : "[FAIL] ") << suite.name << ": "
                  << suite.detail << "\n";
        all_pass = all_pass && suite.pass;
    }
    return all_pass ? 0 : 1;
}

mor::MethodSpec build_spec(const std::string& method, std::size_t rank,
                           std::size_t experts) {
    if (method == "lora") return mor::MethodSpec::lora(rank);
    if (method == "dora") return mor::MethodSpec::dora(rank);
    if (method == "moelora")
        return mor::MethodSpec::moelora(experts == 0 ? 2 : experts, rank);
    return mor::MethodSpec::mor(experts == 0 ? 8 : experts, rank);
}

int cmd_count_params(const std::string& method, std::size_t rank,
                     std::size_t experts) {
    const mor::Geometry geo = mor::llama7b_geometry();
    if (!method.empty()) {
        const mor::MethodSpec spec = build_spec(method, rank, experts);
        std::cout << with_commas(mor::count_params(spec, geo)) << "\n";
        return 0;
    }
    const std::vector<mor::MethodSpec> specs = {
        mor::MethodSpec::lora(rank),
        mor::MethodSpec::dora(rank),
        mor::MethodSpec::moelora(experts == 0 ? 2 : experts, rank),
        mor::MethodSpec::mor(experts == 0 ? 8 : experts, rank),
    };
    std::printf("%-18s %14s %8s\n", "method", "params", "M");
    for (const mor::MethodSpec& spec : specs) {
        const std::uint64_t count = mor::count_params(spec, geo);
        std::printf("%-18s %14s %8s\n", mor::method_name(spec).c_str(),
                    with_commas(count).c_str(), mega(count).c_str());
    }
    return 0;
}

mor::Matrix load_matrix_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("svd-curve: cannot open " + path);
    std::size_t rows = 0;
    std::size_t cols = 0;
    if (!(in >> rows >> cols) || rows == 0 || cols == 0)
        throw std::runtime_error("svd-curve: " + path +
                                 " must start with positive rows cols");
    mor::Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            if (!(in >> m(i, j)))
                throw std::runtime_error("svd-curve: " + path + " ended after " +
                                         std::to_string(i * cols + j) +
                                         " values, expected " +
                                         std::to_string(rows * cols));
    return m;
}

int cmd_svd_curve(const std::string& input, std::size_t rows, std::size_t cols,
                  std::uint64_t seed, const std::string& out_path) {
    mor::Matrix m;
    if (!input.empty()) {
        m = load_matrix_text(input);
    } else {
        mor::RngState rng(seed);
        m = mor::rng_gaussian_matrix(rng, rows, cols, 0.0, 1.0);
    }
    const mor::TruncationCurve curve = mor::truncation_curve(m);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw std::runtime_error("svd-curve: cannot open " + out_path);
        out = &file;
    }
    out->precision(17);
    *out << "rank,error\n";
    for (std::size_t i = 0; i < curve.ranks.size(); ++i)
        *out << curve.ranks[i] << "," << curve.errors[i] << "\n";
    if (!*out) throw std::runtime_error("svd-curve: write failed");
    return 0;
}

void print_router_mass(const mor::Matrix& mass) {
    for (std::size_t k = 0; k < mass.rows(); ++k) {
        std::printf("task %zu:", k);
        for (std::size_t j = 0; j < mass.cols(); ++j)
            std::printf(" %.4f", mass(k, j));
        std::printf("\n");
    }
}

int cmd_train(const std::string& config_path, const std::string& out_dir_flag) {
    mor::RunConfig cfg = mor::parse_config(config_path);
    if (!out_dir_flag.empty()) cfg.out_dir = out_dir_flag;
    std::filesystem::create_directories(cfg.out_dir);

    const mor::TeacherSpec teacher =
        mor::make_teacher(cfg.d_in, cfg.d_out, cfg.rank, cfg.tasks, cfg.tag_width,
                          cfg.alpha, cfg.teacher_seed);
    const mor::TrainConfig tc = mor::train_config(cfg);
    mor::RngState init_rng = mor::RngState(cfg.seed).fork(3);

    mor::TrainReport report;
    const std::string ckpt = cfg.out_dir + "/checkpoint.bin";
    if (cfg.method == "lora") {
        mor::LoRALayer student =
            mor::make_lora_layer(teacher.w, cfg.rank, cfg.alpha, init_rng);
        report = mor::train_student(teacher, student, tc);
        mor::write_checkpoint(student, ckpt);
    } else if (cfg.method == "moelora") {
        mor::MoELoRALayer student = mor::make_moelora_layer(
            teacher.w, cfg.experts, cfg.rank, cfg.alpha, init_rng);
        report = mor::train_student(teacher, student, tc);
        mor::write_checkpoint(student, ckpt);
    } else {
        mor::MoRLayer student =
            mor::make_mor_layer(teacher.w, cfg.experts, cfg.rank, cfg.alpha,
                                mor::router_kind(cfg), init_rng);
        report = mor::train_student(teacher, student, tc);
        mor::write_checkpoint(student, ckpt);
    }
    report.snapshot_path = ckpt;
    mor::write_loss_csv(cfg.out_dir + "/loss.csv", report);
    mor::write_report_json(cfg.out_dir + "/report.json", report);

    double mean_error = 0.0;
    for (std::size_t k = 0; k < report.task_errors.size(); ++k) {
        std::printf("task %zu error: %.6f\n", k, report.task_errors[k]);
        mean_error += report.task_errors[k];
    }
    mean_error /= static_cast<double>(report.task_errors.size());
    std::printf("mean error: %.6f\n", mean_error);
    if (report.router_mass.rows() > 0) {
        std::printf("router mass:\n");
        print_router_mass(report.router_mass);
    }
    std::printf("wrote %s, %s/loss.csv, %s/report.json\n", ckpt.c_str(),
                cfg.out_dir.c_str(), cfg.out_dir.c_str());
    return 0;
}

int cmd_router_report(const std::string& config_path, const std::string& ckpt_path,
                      const std::string& json_path, const std::string& csv_path) {
    const mor::RunConfig cfg = mor::parse_config(config_path);
    const mor::TeacherSpec teacher =
        mor::make_teacher(cfg.d_in, cfg.d_out, cfg.rank, cfg.tasks, cfg.tag_width,
                          cfg.alpha, cfg.teacher_seed);
    mor::AnyLayer any = mor::read_checkpoint(ckpt_path);
    mor::MoRLayer* layer = std::get_if<mor::MoRLayer>(&any);
    if (!layer) {
        std::cerr << "router-report: " << ckpt_path
                  << " does not hold a mixture-of-ranks layer\n";
        return 1;
    }
    layer->w = teacher.w;
    layer->router = mor::router_kind(cfg);
    mor::RngState rng = mor::RngState(cfg.seed).fork(4);
    const mor::Matrix mass = mor::router_report(*layer, teacher, cfg.n_eval, rng);

    print_router_mass(mass);
    if (!json_path.empty()) {
        nlohmann::json j;
        std::vector<std::vector<double>> rows;
        for (std::size_t k = 0; k < mass.rows(); ++k) {
            std::vector<double> row;
            for (std::size_t i = 0; i < mass.cols(); ++i) row.push_back(mass(k, i));
            rows.push_back(std::move(row));
        }
        j["router_mass"] = rows;
        std::ofstream out(json_path);
        if (!out) throw std::runtime_error("router-report: cannot open " + json_path);
        out << j.dump(2) << "\n";
    }
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw std::runtime_error("router-report: cannot open " + csv_path);
        out << "task";
        for (std::size_t i = 0; i < mass.cols(); ++i) out << ",expert" << i;
        out << "\n";
        out.precision(17);
        for (std::size_t k = 0; k < mass.rows(); ++k) {
            out << k;
            for (std::size_t i = 0; i < mass.cols(); ++i) out << "," << mass(k, i);
            out << "\n";
        }
    }
    return 0;
}

}  // namespace

int run_command(int argc, char** argv) {
    CLI::App app{"Mixture-of-ranks adapter toolkit"};
    app.require_subcommand(1);

    CLI::App* verify = app.add_subcommand("verify", "Run every oracle suite");

    CLI::App* count = app.add_subcommand(
        "count-params", "Trainable-parameter table over the LLaMA-7B preset");
    std::string preset = "llama7b";
    std::string method;
    std::size_t rank = 8;
    std::size_t experts = 0;
    count->add_option("--preset", preset, "Geometry preset")
        ->check(CLI::IsMember({"llama7b"}))
        ->capture_default_str();
    count->add_option("--method", method, "Single method to count")
        ->check(CLI::IsMember({"lora", "dora", "moelora", "mor"}));
    count->add_option("--r", rank, "Adapter rank")->capture_default_str();
    count->add_option("--experts", experts,
                      "Expert count (default 8 for mor, 2 for moelora)");

    CLI::App* svd = app.add_subcommand(
        "svd-curve", "Rank-truncation error curve for a matrix, as CSV");
    std::string svd_input;
    std::size_t svd_rows = 16;
    std::size_t svd_cols = 12;
    std::uint64_t svd_seed = 0;
    std::string svd_out;
    svd->add_option("--input", svd_input,
                    "Text matrix file: rows cols then row-major values");
    svd->add_option("--rows", svd_rows, "Random matrix rows")->capture_default_str();
    svd->add_option("--cols", svd_cols, "Random matrix cols")->capture_default_str();
    svd->add_option("--seed", svd_seed, "Random matrix seed")->capture_default_str();
    svd->add_option("--out", svd_out, "CSV path (default stdout)");

    CLI::App* train = app.add_subcommand(
        "train", "Fit a student adapter to the synthetic multi-task teacher");
    std::string train_config_path;
    std::string train_out_dir;
    train->add_option("--config", train_config_path, "JSON config path")
        ->required();
    train->add_option("--out-dir", train_out_dir, "Overrides out_dir from config");

    CLI::App* router = app.add_subcommand(
        "router-report", "Per-task mean router mass for a trained checkpoint");
    std::string router_config_path;
    std::string router_ckpt;
    std::string router_json;
    std::string router_csv;
    router->add_option("--config", router_config_path, "JSON config path")
        ->required();
    router->add_option("--checkpoint", router_ckpt, "Checkpoint path")->required();
    router->add_option("--json", router_json, "Also write the matrix as JSON");
    router->add_option("--csv", router_csv, "Also write the matrix as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    if (verify->parsed()) return cmd_verify();
    if (count->parsed()) return cmd_count_params(method, rank, experts);
    if (svd->parsed())
        return cmd_svd_curve(svd_input, svd_rows, svd_cols, svd_seed, svd_out);
    if (train->parsed()) return cmd_train(train_config_path, train_out_dir);
    if (router->parsed())
        return cmd_router_report(router_config_path, router_ckpt, router_json,
                                 router_csv);
    return 2;
}

int main(int argc, char** argv) {
    try {
        return run_command(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
