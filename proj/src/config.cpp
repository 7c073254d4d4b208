#include "mor/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mor {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) {
    throw std::runtime_error("config: " + msg);
}

double get_number(const json& j, const std::string& key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) fail("\"" + key + "\" must be a number");
    return j[key].get<double>();
}

std::uint64_t get_uint(const json& j, const std::string& key,
                       std::uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_unsigned())
        fail("\"" + key + "\" must be a nonnegative integer");
    return j[key].get<std::uint64_t>();
}

std::string get_choice(const json& j, const std::string& key,
                       const std::string& fallback,
                       const std::set<std::string>& allowed) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_string()) fail("\"" + key + "\" must be a string");
    const std::string v = j[key].get<std::string>();
    if (!allowed.count(v)) {
        std::string options;
        for (const std::string& a : allowed)
            options += (options.empty() ? "" : ", ") + a;
        fail("\"" + key + "\" must be one of: " + options);
    }
    return v;
}

std::string get_string(const json& j, const std::string& key,
                       const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_string()) fail("\"" + key + "\" must be a string");
    return j[key].get<std::string>();
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail("top level must be a JSON object");

    static const std::set<std::string> known = {
        "method",    "d_in",      "d_out",    "r",         "experts",
        "alpha",     "router",    "aux",      "optimizer", "beta1",
        "beta2",     "epsilon",   "lr",       "steps",     "batch",
        "dropout",   "seed",      "tasks",    "tag_width", "teacher_seed",
        "log_every", "n_eval",    "out_dir"};
    for (const auto& item : j.items())
        if (!known.count(item.key())) fail("unknown key \"" + item.key() + "\"");

    RunConfig c;
    c.method = get_choice(j, "method", c.method, {"mor", "lora", "moelora"});
    c.d_in = get_uint(j, "d_in", c.d_in);
    c.d_out = get_uint(j, "d_out", c.d_out);
    c.rank = get_uint(j, "r", c.rank);
    c.experts = get_uint(j, "experts", c.experts);
    c.alpha = get_number(j, "alpha", c.alpha);
    c.router = get_choice(j, "router", c.router,
                          {"learnable", "mean_pool", "balanced"});
    c.aux_coefficient = get_number(j, "aux", c.aux_coefficient);
    c.optimizer = get_choice(j, "optimizer", c.optimizer, {"adam", "sgd"});
    c.beta1 = get_number(j, "beta1", c.beta1);
    c.beta2 = get_number(j, "beta2", c.beta2);
    c.epsilon = get_number(j, "epsilon", c.epsilon);
    c.learning_rate = get_number(j, "lr", c.learning_rate);
    c.steps = get_uint(j, "steps", c.steps);
    c.batch = get_uint(j, "batch", c.batch);
    c.dropout = get_number(j, "dropout", c.dropout);
    c.seed = get_uint(j, "seed", c.seed);
    c.tasks = get_uint(j, "tasks", c.tasks);
    c.tag_width = get_uint(j, "tag_width", c.tag_width);
    c.teacher_seed = get_uint(j, "teacher_seed", c.teacher_seed);
    c.log_every = get_uint(j, "log_every", c.log_every);
    c.n_eval = get_uint(j, "n_eval", c.n_eval);
    c.out_dir = get_string(j, "out_dir", c.out_dir);

    if (c.d_in < 1) fail("\"d_in\" must be positive");
    if (c.d_out < 1) fail("\"d_out\" must be positive");
    if (c.rank < 1) fail("\"r\" must be positive");
    if (c.rank > std::min(c.d_in, c.d_out))
        fail("\"r\" must not exceed min(d_in, d_out)");
    if (c.experts < 1) fail("\"experts\" must be positive");
    if (!(c.alpha > 0.0)) fail("\"alpha\" must be positive");
    if (c.aux_coefficient < 0.0) fail("\"aux\" must be nonnegative");
    if (c.learning_rate < 0.0) fail("\"lr\" must be nonnegative");
    if (c.beta1 < 0.0 || c.beta1 >= 1.0) fail("\"beta1\" must lie in [0, 1)");
    if (c.beta2 < 0.0 || c.beta2 >= 1.0) fail("\"beta2\" must lie in [0, 1)");
    if (!(c.epsilon > 0.0)) fail("\"epsilon\" must be positive");
    if (c.batch < 1) fail("\"batch\" must be positive");
    if (c.dropout < 0.0 || c.dropout >= 1.0) fail("\"dropout\" must lie in [0, 1)");
    if (c.tasks < 1) fail("\"tasks\" must be positive");
    if (c.tag_width < c.tasks) fail("\"tag_width\" must be at least \"tasks\"");
    if (c.tag_width > c.d_in) fail("\"tag_width\" must not exceed \"d_in\"");
    if (c.log_every < 1) fail("\"log_every\" must be positive");
    if (c.n_eval < 1) fail("\"n_eval\" must be positive");
    if (c.batch < c.tasks) fail("\"batch\" must be at least \"tasks\"");
    return c;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

RouterKind router_kind(const RunConfig& config) {
    if (config.router == "mean_pool") return RouterKind::mean_pool();
    if (config.router == "balanced") return RouterKind::balanced(config.aux_coefficient);
    return RouterKind::learnable();
}

TrainConfig train_config(const RunConfig& config) {
    TrainConfig t;
    t.optimizer = config.optimizer == "sgd" ? Optimizer::sgd : Optimizer::adam;
    t.beta1 = config.beta1;
    t.beta2 = config.beta2;
    t.epsilon = config.epsilon;
    t.learning_rate = config.learning_rate;
    t.steps = config.steps;
    t.batch = config.batch;
    t.dropout = config.dropout;
    t.router = router_kind(config);
    t.seed = config.seed;
    t.log_every = config.log_every;
    t.n_eval = config.n_eval;
    return t;
}

}  // namespace mor
