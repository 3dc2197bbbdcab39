#include "jacmatch/train.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "jacmatch/checkpoint.hpp"
#include "jacmatch/rng.hpp"

namespace jm::train {

using namespace jm::ad;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDatasetSeed = 9000;  // task data is fixed across run seeds

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed) ok |= it.key() == k;
        JM_CHECK_CONFIG(ok, "config: unknown key '", it.key(), "' in ", where);
    }
}

data::SyntheticTask task_from_json(const nlohmann::json& j, const std::string& where) {
    check_keys(j, {"kind", "classes", "dim", "image_shape", "noise", "train_per_class",
                   "test_per_class"},
               where);
    data::SyntheticTask t;
    if (j.contains("kind")) t.kind = data::task_kind_from_name(j["kind"].get<std::string>());
    if (j.contains("classes")) t.classes = j["classes"].get<int>();
    if (j.contains("dim")) t.dim = j["dim"].get<int>();
    if (j.contains("image_shape")) t.image_shape = j["image_shape"].get<Shape>();
    if (j.contains("noise")) t.noise = j["noise"].get<double>();
    if (j.contains("train_per_class")) t.train_per_class = j["train_per_class"].get<int>();
    if (j.contains("test_per_class")) t.test_per_class = j["test_per_class"].get<int>();
    return t;
}

nlohmann::json task_to_json(const data::SyntheticTask& t) {
    nlohmann::json j;
    j["kind"] = data::task_kind_name(t.kind);
    j["classes"] = t.classes;
    j["dim"] = t.dim;
    if (!t.image_shape.empty()) j["image_shape"] = t.image_shape;
    j["noise"] = t.noise;
    j["train_per_class"] = t.train_per_class;
    j["test_per_class"] = t.test_per_class;
    return j;
}

const char* family_name(losses::LossFamily f) {
    return f == losses::LossFamily::squared_error ? "squared-error" : "cross-entropy";
}

const char* jac_mode_name(losses::JacobianMode m) {
    switch (m) {
        case losses::JacobianMode::full: return "full";
        case losses::JacobianMode::correct_class: return "correct-class";
        case losses::JacobianMode::max_output: return "max-output";
        case losses::JacobianMode::max_attention_pixel: return "max-attention-pixel";
    }
    return "?";
}

losses::JacobianMode jac_mode_from_name(const std::string& s) {
    for (int m = 0; m <= 3; ++m) {
        if (s == jac_mode_name(static_cast<losses::JacobianMode>(m)))
            return static_cast<losses::JacobianMode>(m);
    }
    JM_CHECK_CONFIG(false, "config: unknown jacobian mode '", s, "'");
    return losses::JacobianMode::full;
}

}  // namespace

nn::Network build_network(const std::string& arch, const Shape& input_shape, int classes,
                          int source_classes, Rng& rng) {
    if (arch == "vgg2t") return nn::make_vgg2t(input_shape, classes, rng);
    if (arch == "vgg1s") return nn::make_vgg1s(input_shape, classes, rng);
    if (arch == "vgg1s-2h") {
        return nn::make_vgg1s_two_headed(input_shape, source_classes, classes, rng);
    }
    if (arch.rfind("mlp:", 0) == 0) {
        const std::string body = arch.substr(4);
        const auto at = body.find('@');
        JM_CHECK_CONFIG(at != std::string::npos, "mlp arch needs '@relu' or '@sigmoid': ", arch);
        std::vector<int> hidden;
        std::string dims = body.substr(0, at);
        std::size_t pos = 0;
        while (pos < dims.size()) {
            const auto comma = dims.find(',', pos);
            const std::string tok = dims.substr(pos, comma == std::string::npos ? dims.size() - pos
                                                                                : comma - pos);
            if (!tok.empty()) hidden.push_back(std::stoi(tok));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        const std::string act = body.substr(at + 1);
        JM_CHECK_CONFIG(act == "relu" || act == "sigmoid", "mlp activation must be relu|sigmoid");
        JM_CHECK_CONFIG(input_shape.size() == 1, "mlp arch expects flat inputs");
        return nn::make_mlp(input_shape[0], hidden, classes,
                            act == "relu" ? nn::LayerKind::relu : nn::LayerKind::sigmoid, rng);
    }
    JM_CHECK_CONFIG(false, "unknown architecture '", arch, "'");
    return {};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    check_keys(j, {"task", "target_task", "teacher_checkpoint", "teacher_arch", "student_arch",
                   "loss", "optimizer", "epochs", "teacher_epochs", "batch_size",
                   "n_per_class", "seeds", "out_dir", "test_noise_grid", "transfer",
                   "student_init_checkpoint"},
               "top level");
    ExperimentConfig c;
    if (j.contains("task")) c.task = task_from_json(j["task"], "task");
    if (j.contains("target_task")) c.target_task = task_from_json(j["target_task"], "target_task");
    if (j.contains("teacher_checkpoint")) c.teacher_checkpoint = j["teacher_checkpoint"];
    if (j.contains("teacher_arch")) c.teacher_arch = j["teacher_arch"];
    if (j.contains("student_arch")) c.student_arch = j["student_arch"];
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        check_keys(l, {"alpha", "beta", "gamma", "sigma", "family", "temperature", "jac_mode",
                       "pool_window", "attention_beta", "attention_gamma", "penalty_lambda",
                       "mse_alpha", "tap_pairs"},
                   "loss");
        if (l.contains("alpha")) c.loss.alpha = l["alpha"];
        if (l.contains("beta")) c.loss.beta = l["beta"];
        if (l.contains("gamma")) c.loss.gamma = l["gamma"];
        if (l.contains("sigma")) c.loss.sigma = l["sigma"];
        if (l.contains("family")) {
            const std::string f = l["family"];
            JM_CHECK_CONFIG(f == "squared-error" || f == "cross-entropy",
                            "config: unknown loss family '", f, "'");
            c.loss.family = f == "squared-error" ? losses::LossFamily::squared_error
                                                 : losses::LossFamily::cross_entropy;
        }
        if (l.contains("temperature")) c.loss.temperature = l["temperature"];
        if (l.contains("jac_mode"))
            c.loss.jac_strategy.mode = jac_mode_from_name(l["jac_mode"].get<std::string>());
        if (l.contains("pool_window")) c.loss.jac_strategy.pool_window = l["pool_window"];
        if (l.contains("attention_beta")) c.loss.attention_beta = l["attention_beta"];
        if (l.contains("attention_gamma")) c.loss.attention_gamma = l["attention_gamma"];
        if (l.contains("penalty_lambda")) c.loss.penalty_lambda = l["penalty_lambda"];
        if (l.contains("mse_alpha")) c.loss.mse_alpha = l["mse_alpha"];
        if (l.contains("tap_pairs")) {
            for (const auto& p : l["tap_pairs"]) {
                c.loss.tap_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
            }
        }
    }
    if (j.contains("optimizer")) {
        const auto& o = j["optimizer"];
        check_keys(o, {"kind", "momentum", "beta1", "beta2", "eps", "lr", "drop_epochs",
                       "factor"},
                   "optimizer");
        if (o.contains("kind")) {
            const std::string k = o["kind"];
            JM_CHECK_CONFIG(k == "adam" || k == "sgd-momentum", "config: unknown optimizer '", k,
                            "'");
            c.optimizer.kind = k == "adam" ? OptKind::adam : OptKind::sgd_momentum;
        }
        if (o.contains("momentum")) c.optimizer.momentum = o["momentum"];
        if (o.contains("beta1")) c.optimizer.beta1 = o["beta1"];
        if (o.contains("beta2")) c.optimizer.beta2 = o["beta2"];
        if (o.contains("eps")) c.optimizer.eps = o["eps"];
        if (o.contains("lr")) c.optimizer.schedule.initial = o["lr"];
        if (o.contains("drop_epochs"))
            c.optimizer.schedule.drop_epochs = o["drop_epochs"].get<std::vector<int>>();
        if (o.contains("factor")) c.optimizer.schedule.factor = o["factor"];
    }
    if (j.contains("epochs")) c.epochs = j["epochs"];
    if (j.contains("teacher_epochs")) c.teacher_epochs = j["teacher_epochs"];
    if (j.contains("batch_size")) c.batch_size = j["batch_size"];
    if (j.contains("n_per_class")) c.n_per_class = j["n_per_class"];
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"];
    if (j.contains("test_noise_grid"))
        c.test_noise_grid = j["test_noise_grid"].get<std::vector<double>>();
    if (j.contains("transfer")) c.transfer = j["transfer"];
    if (j.contains("student_init_checkpoint"))
        c.student_init_checkpoint = j["student_init_checkpoint"];
    c.validate();
    return c;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["task"] = task_to_json(task);
    if (transfer) j["target_task"] = task_to_json(target_task);
    if (!teacher_checkpoint.empty()) j["teacher_checkpoint"] = teacher_checkpoint;
    j["teacher_arch"] = teacher_arch;
    j["student_arch"] = student_arch;
    nlohmann::json l;
    l["alpha"] = loss.alpha;
    l["beta"] = loss.beta;
    l["gamma"] = loss.gamma;
    l["sigma"] = loss.sigma;
    l["family"] = family_name(loss.family);
    l["temperature"] = loss.temperature;
    l["jac_mode"] = jac_mode_name(loss.jac_strategy.mode);
    if (loss.jac_strategy.pool_window != 0) l["pool_window"] = loss.jac_strategy.pool_window;
    if (loss.attention_beta != 0) l["attention_beta"] = loss.attention_beta;
    if (loss.attention_gamma != 0) l["attention_gamma"] = loss.attention_gamma;
    if (loss.penalty_lambda != 0) l["penalty_lambda"] = loss.penalty_lambda;
    if (loss.mse_alpha != 0) l["mse_alpha"] = loss.mse_alpha;
    if (!loss.tap_pairs.empty()) {
        nlohmann::json pairs = nlohmann::json::array();
        for (auto [a, b] : loss.tap_pairs) pairs.push_back({a, b});
        l["tap_pairs"] = pairs;
    }
    j["loss"] = l;
    nlohmann::json o;
    o["kind"] = optimizer.kind == OptKind::adam ? "adam" : "sgd-momentum";
    o["momentum"] = optimizer.momentum;
    o["beta1"] = optimizer.beta1;
    o["beta2"] = optimizer.beta2;
    o["eps"] = optimizer.eps;
    o["lr"] = optimizer.schedule.initial;
    o["drop_epochs"] = optimizer.schedule.drop_epochs;
    o["factor"] = optimizer.schedule.factor;
    j["optimizer"] = o;
    j["epochs"] = epochs;
    j["teacher_epochs"] = teacher_epochs;
    j["batch_size"] = batch_size;
    j["n_per_class"] = n_per_class;
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    if (!test_noise_grid.empty()) j["test_noise_grid"] = test_noise_grid;
    j["transfer"] = transfer;
    if (!student_init_checkpoint.empty())
        j["student_init_checkpoint"] = student_init_checkpoint;
    return j;
}

std::string ExperimentConfig::config_hash() const {
    nlohmann::json j = to_json();
    j.erase("seeds");
    j.erase("out_dir");
    return fnv1a_hex(j.dump());
}

void ExperimentConfig::validate() const {
    task.validate();
    loss.validate();
    optimizer.validate();
    JM_CHECK_CONFIG(epochs >= 1, "config: epochs must be >= 1");
    JM_CHECK_CONFIG(batch_size >= 1, "config: batch_size must be >= 1");
    JM_CHECK_CONFIG(!seeds.empty(), "config: at least one seed required");
    JM_CHECK_CONFIG(n_per_class >= 0, "config: n_per_class must be >= 0");
    if (transfer) target_task.validate();
    for (double s : test_noise_grid) JM_CHECK_CONFIG(s >= 0, "config: test sigma must be >= 0");
}

nlohmann::json RunResult::to_json() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["test_accuracy"] = test_accuracy;
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : epochs) {
        nlohmann::json ej;
        ej["epoch"] = e.epoch;
        nlohmann::json terms = nlohmann::json::array();
        for (const auto& t : e.terms) {
            terms.push_back({{"name", t.name},
                             {"weight", t.weight},
                             {"raw", t.raw},
                             {"weighted", t.weighted}});
        }
        ej["terms"] = terms;
        ej["zero_norm_count"] = e.zero_norm_count;
        ej["clamp_count"] = e.clamp_count;
        eps.push_back(ej);
    }
    j["epochs"] = eps;
    if (!robustness.empty()) {
        nlohmann::json r = nlohmann::json::array();
        for (auto [sig, acc] : robustness) r.push_back({{"sigma", sig}, {"accuracy", acc}});
        j["robustness"] = r;
    }
    if (!jacobian_loss_reduction.empty()) j["jacobian_loss_reduction"] = jacobian_loss_reduction;
    if (!second_order_grad_norms.empty()) {
        nlohmann::json n = nlohmann::json::array();
        for (const auto& [name, norm] : second_order_grad_norms)
            n.push_back({{"param", name}, {"norm", norm}});
        j["second_order_grad_norms"] = n;
    }
    return j;
}

std::string RunResult::training_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,term,weight,raw,weighted,zero_norm_count,clamp_count\n";
    for (const auto& e : epochs) {
        for (const auto& t : e.terms) {
            if (t.weight == 0) continue;
            os << e.epoch << "," << t.name << "," << t.weight << "," << t.raw << ","
               << t.weighted << "," << e.zero_norm_count << "," << e.clamp_count << "\n";
        }
    }
    return os.str();
}

double evaluate_accuracy(const nn::Network& net, const data::Dataset& ds, nn::Head head) {
    JM_CHECK(ds.size() > 0, "evaluate_accuracy: empty dataset");
    int correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Tensor logits = nn::forward(net, ds.inputs[i].detached(), head).logits;
        int best = 0;
        for (int k = 1; k < logits.shape()[0]; ++k) {
            if (logits.data()[k] > logits.data()[best]) best = k;
        }
        correct += best == ds.labels[i];
    }
    return 100.0 * correct / static_cast<double>(ds.size());
}

namespace {

struct PreparedData {
    data::Dataset train;
    data::Dataset test;
};

PreparedData prepare_data(const data::SyntheticTask& task, int n_per_class,
                          std::uint64_t run_seed) {
    // the dataset is a fixed function of the task: every run seed sees the
    // same data (subsets and inits vary), and distinct tasks draw distinct
    // blob centers
    const std::uint64_t data_seed =
        Rng::hash_combine(kDatasetSeed, std::stoull(fnv1a_hex(task.name()), nullptr, 16));
    auto [train, test] = data::generate(task, data_seed);
    data::normalize(train);
    // test data shares the training statistics
    test.mean = train.mean;
    test.stdev = train.stdev;
    data::normalize(test);
    if (n_per_class > 0) train = data::subset_per_class(train, n_per_class, run_seed);
    return {std::move(train), std::move(test)};
}

std::string run_basename(const ExperimentConfig& config, std::uint64_t seed) {
    return strcat("run-", config.config_hash(), "-seed", seed);
}

}  // namespace

void pretrain_teacher(const ExperimentConfig& config, const std::string& path,
                      std::uint64_t seed) {
    ExperimentConfig tc = config;
    if (config.teacher_epochs > 0) tc.epochs = config.teacher_epochs;
    tc.loss = losses::LossSpec{};
    tc.loss.alpha = 1.0;
    tc.transfer = false;
    tc.n_per_class = 0;
    tc.student_arch = config.teacher_arch;
    tc.teacher_checkpoint.clear();
    tc.student_init_checkpoint.clear();
    tc.test_noise_grid.clear();

    PreparedData d = prepare_data(tc.task, 0, seed);
    Rng init_rng(Rng::hash_combine(seed, 0x7e4c4e5));
    nn::Network teacher = build_network(tc.teacher_arch, d.train.inputs[0].shape(),
                                        tc.task.classes, tc.task.classes, init_rng);
    Optimizer opt(tc.optimizer);
    std::vector<Tensor> params = teacher.param_list();

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        Rng shuffle_rng(Rng::hash_combine(seed, 0x5affe + static_cast<std::uint64_t>(epoch)));
        std::vector<int> order(d.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
        }
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(tc.batch_size)) {
            losses::Batch batch;
            for (std::size_t b = start;
                 b < std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
                 ++b) {
                batch.inputs.push_back(d.train.inputs[static_cast<std::size_t>(order[b])]);
                batch.labels.push_back(d.train.labels[static_cast<std::size_t>(order[b])]);
            }
            Tape tape;
            auto bound = nn::bind_params(teacher, tape);
            auto breakdown = losses::composite_loss(tc.loss, batch, nullptr, teacher, tape, &bound);
            auto grads = backward(breakdown.total, bound);
            opt.step(params, grads, epoch);
        }
    }
    nn::save_network(path, teacher);
}

RunResult train_run(const ExperimentConfig& config, std::uint64_t seed,
                    const std::string& resume_checkpoint) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(config.out_dir);

    const data::SyntheticTask& student_task = config.transfer ? config.target_task : config.task;
    PreparedData d = prepare_data(student_task, config.n_per_class, seed);

    const bool needs_teacher = config.loss.beta > 0 || config.loss.gamma > 0 ||
                               config.loss.attention_beta > 0 ||
                               config.loss.attention_gamma > 0;
    nn::Network teacher;
    if (needs_teacher) {
        JM_CHECK_CONFIG(!config.teacher_checkpoint.empty(),
                        "config: teacher_checkpoint required when matching terms are enabled");
        Rng dummy(0);
        teacher = build_network(config.teacher_arch, d.train.inputs[0].shape(),
                                config.task.classes, config.task.classes, dummy);
        nn::load_network_params(config.teacher_checkpoint, teacher);
    }

    Rng init_rng(Rng::hash_combine(seed, 0x57123e7));
    nn::Network student = build_network(config.student_arch, d.train.inputs[0].shape(),
                                        student_task.classes, config.task.classes, init_rng);
    if (!config.student_init_checkpoint.empty()) {
        // oracle-style warm start: load every stored tensor whose name and
        // shape match (a one-headed source checkpoint covers the trunk and
        // the source head of a two-headed student)
        auto stored = nn::load_tensors(config.student_init_checkpoint);
        auto current = student.named_params();
        std::vector<Tensor> values;
        for (auto& [name, tensor] : current) {
            bool loaded = false;
            for (const auto& [sname, stensor] : stored) {
                if (sname == name && stensor.shape() == tensor.shape()) {
                    values.push_back(stensor);
                    loaded = true;
                    break;
                }
            }
            if (!loaded) values.push_back(tensor);
        }
        student.set_params(values);
    }

    Optimizer opt(config.optimizer);
    std::vector<Tensor> params = student.param_list();
    int start_epoch = 0;
    if (!resume_checkpoint.empty()) {
        auto stored = nn::load_tensors(resume_checkpoint);
        std::vector<Tensor> param_values;
        std::vector<std::pair<std::string, Tensor>> opt_state;
        auto named = student.named_params();
        for (const auto& [name, t] : stored) {
            if (name == "meta.epoch") {
                start_epoch = static_cast<int>(t.data()[0]);
            } else if (name.rfind("opt.", 0) == 0) {
                opt_state.emplace_back(name, t);
            }
        }
        for (const auto& [name, t] : named) {
            bool found = false;
            for (const auto& [sname, st] : stored) {
                if (sname == name) {
                    JM_CHECK(st.shape() == t.shape(), "resume: shape mismatch for '", name, "'");
                    param_values.push_back(st);
                    found = true;
                    break;
                }
            }
            JM_CHECK(found, "resume: missing parameter '", name, "' in checkpoint");
        }
        student.set_params(param_values);
        params = student.param_list();
        opt.restore(opt_state, params);
    }

    const bool second_order = config.loss.gamma > 0 || config.loss.attention_gamma > 0;

    RunResult result;
    result.config_hash = config.config_hash();
    result.seed = seed;

    auto save_state = [&](const std::string& path, int next_epoch) {
        auto named = student.named_params();
        for (const auto& [name, t] : opt.state()) named.emplace_back(name, t);
        named.emplace_back("meta.epoch", Tensor::from({1}, {static_cast<double>(next_epoch)}));
        nn::save_tensors(path, named);
    };

    const std::string last_good_path =
        (fs::path(config.out_dir) / (run_basename(config, seed) + ".last-good.ckpt")).string();

    for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(Rng::hash_combine(seed, 0x5affe + static_cast<std::uint64_t>(epoch)));
        std::vector<int> order(d.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
        }

        EpochLog log;
        log.epoch = epoch;
        int batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            losses::Batch batch;
            for (std::size_t b = start;
                 b < std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
                 ++b) {
                batch.inputs.push_back(d.train.inputs[static_cast<std::size_t>(order[b])]);
                batch.labels.push_back(d.train.labels[static_cast<std::size_t>(order[b])]);
            }
            Tape tape;
            auto bound = nn::bind_params(student, tape);
            losses::LossBreakdown breakdown;
            try {
                breakdown = losses::composite_loss(config.loss, batch,
                                                   needs_teacher ? &teacher : nullptr, student,
                                                   tape, &bound);
            } catch (const NumericError&) {
                save_state(last_good_path, epoch);
                throw;
            }
            if (second_order) {
                // gradients of gradients were recorded during loss creation
                JM_CHECK(tape.generation() > 0,
                         "train: second-order path produced no recorded backward pass");
            }
            auto grads = backward(breakdown.total, bound);
            opt.step(params, grads, epoch);

            if (log.terms.empty()) {
                log.terms = breakdown.terms;
            } else {
                for (std::size_t t = 0; t < log.terms.size(); ++t) {
                    log.terms[t].raw += breakdown.terms[t].raw;
                    log.terms[t].weighted += breakdown.terms[t].weighted;
                }
            }
            log.zero_norm_count += breakdown.counters.zero_norm_normalizations;
            log.clamp_count += breakdown.counters.softmax_clamps;
            ++batches;
        }
        for (auto& t : log.terms) {
            t.raw /= batches;
            t.weighted /= batches;
        }
        result.epochs.push_back(log);
        save_state(last_good_path, epoch + 1);
    }

    result.test_accuracy = evaluate_accuracy(
        student, d.test, student.head_count() == 2 ? nn::Head::target : nn::Head::only);

    for (std::size_t i = 0; i < config.test_noise_grid.size(); ++i) {
        const double sigma = config.test_noise_grid[i];
        data::Dataset noisy =
            data::add_input_noise(d.test, sigma, Rng::hash_combine(seed, 0xab5e + i));
        result.robustness.emplace_back(
            sigma, evaluate_accuracy(student, noisy,
                                     student.head_count() == 2 ? nn::Head::target
                                                               : nn::Head::only));
    }

    if (config.loss.attention_gamma > 0 && !result.epochs.empty()) {
        auto term_mean = [&](const EpochLog& e) {
            for (const auto& t : e.terms) {
                if (t.name == "match_attention_jacobians") return t.raw;
            }
            return 0.0;
        };
        const double first = term_mean(result.epochs.front());
        const double last = term_mean(result.epochs.back());
        if (first != 0.0) {
            for (auto [tt, st] : config.loss.tap_pairs) {
                result.jacobian_loss_reduction[strcat("tap(", tt, ",", st, ")")] =
                    (first - last) / first * 100.0;
            }
        }
    }

    if (second_order && !d.train.inputs.empty()) {
        // diagnostic: per-parameter norms of the second-order terms' gradient
        losses::LossSpec diag = config.loss;
        diag.alpha = diag.beta = diag.attention_beta = diag.penalty_lambda = 0.0;
        losses::Batch batch;
        batch.inputs = {d.train.inputs[0]};
        batch.labels = {d.train.labels[0]};
        Tape tape;
        auto bound = nn::bind_params(student, tape);
        auto breakdown = losses::composite_loss(diag, batch, needs_teacher ? &teacher : nullptr,
                                                student, tape, &bound);
        auto grads = backward(breakdown.total, bound);
        auto named = student.named_params();
        for (std::size_t i = 0; i < named.size(); ++i) {
            double sq = 0.0;
            for (double v : grads[i].value.data()) sq += v * v;
            result.second_order_grad_norms.emplace_back(named[i].first, std::sqrt(sq));
        }
    }

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string base = (fs::path(config.out_dir) / run_basename(config, seed)).string();
    save_state(base + ".ckpt", config.epochs);
    {
        std::ofstream os(base + ".json");
        os << result.to_json().dump(2) << "\n";
    }
    {
        std::ofstream os(base + ".csv");
        os << result.training_csv();
    }
    return result;
}

namespace {

// fixed-size job pool: results land by index, so aggregation order is
// deterministic regardless of the worker count
template <typename Job>
void run_jobs(const std::vector<Job>& jobs, int thread_count) {
    if (thread_count <= 1) {
        for (const auto& job : jobs) job();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(thread_count));
    for (int w = 0; w < thread_count; ++w) {
        workers.emplace_back([&, w] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= jobs.size()) return;
                try {
                    jobs[i]();
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double mean_of(const std::vector<double>& xs) {
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

double stdev_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::string GridResult::csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "method";
    for (const auto& c : col_labels) os << ",mean:" << c << ",stdev:" << c;
    os << "\n";
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
        os << "\"" << row_labels[r] << "\"";
        for (std::size_t c = 0; c < col_labels.size(); ++c) {
            os << "," << mean[r][c] << "," << stdev[r][c];
        }
        os << "\n";
    }
    return os.str();
}

const std::vector<std::string>& distill_method_labels() {
    static const std::vector<std::string> labels = {
        "Cross-Entropy (CE) training",
        "CE + match activations",
        "CE + match Jacobians",
        "CE + match {activations + Jacobians}",
        "Match activations only",
        "Match {activations + Jacobians}",
    };
    return labels;
}

const std::vector<std::string>& transfer_method_labels() {
    static const std::vector<std::string> labels = {
        "Cross-Entropy (CE) training on untrained student network",
        "CE on pre-trained student network (Oracle)",
        "CE + match activations",
        "CE + match {activations + Jacobians}",
        "CE + match {activations + attention}",
        "CE + match {activations + attention + Jacobians}",
    };
    return labels;
}

namespace {

losses::LossSpec distill_method_spec(const losses::LossSpec& base, const std::string& label) {
    losses::LossSpec s = base;
    s.alpha = s.beta = s.gamma = 0.0;
    if (label == "Cross-Entropy (CE) training") {
        s.alpha = 1.0;
    } else if (label == "CE + match activations") {
        s.alpha = s.beta = 1.0;
    } else if (label == "CE + match Jacobians") {
        s.alpha = s.gamma = 1.0;
    } else if (label == "CE + match {activations + Jacobians}") {
        s.alpha = s.beta = s.gamma = 1.0;
    } else if (label == "Match activations only") {
        s.beta = 1.0;
    } else if (label == "Match {activations + Jacobians}") {
        s.beta = s.gamma = 1.0;
    } else {
        JM_CHECK(false, "unknown distill method '", label, "'");
    }
    return s;
}

std::string ensure_teacher(const ExperimentConfig& base) {
    if (!base.teacher_checkpoint.empty() && fs::exists(base.teacher_checkpoint)) {
        return base.teacher_checkpoint;
    }
    fs::create_directories(base.out_dir);
    const std::string path =
        (fs::path(base.out_dir) / strcat("teacher-", base.teacher_arch, ".ckpt")).string();
    if (!fs::exists(path)) pretrain_teacher(base, path, 1000);
    return path;
}

}  // namespace

GridResult distill_grid(const ExperimentConfig& base, const std::vector<int>& n_per_class,
                        int jobs) {
    JM_CHECK_CONFIG(!n_per_class.empty(), "distill-grid: n_per_class list required");
    const std::string teacher_path = ensure_teacher(base);

    GridResult grid;
    grid.row_labels = distill_method_labels();
    for (int n : n_per_class) grid.col_labels.push_back(strcat("n=", n));
    grid.mean.assign(grid.row_labels.size(), std::vector<double>(n_per_class.size(), 0.0));
    grid.stdev.assign(grid.row_labels.size(), std::vector<double>(n_per_class.size(), 0.0));

    struct Cell {
        std::size_t row, col;
        std::vector<double> accs;
    };
    std::vector<Cell> cells;
    for (std::size_t r = 0; r < grid.row_labels.size(); ++r) {
        for (std::size_t c = 0; c < n_per_class.size(); ++c) {
            cells.push_back({r, c, std::vector<double>(base.seeds.size(), 0.0)});
        }
    }
    std::vector<std::function<void()>> work;
    for (auto& cell : cells) {
        for (std::size_t s = 0; s < base.seeds.size(); ++s) {
            work.push_back([&base, &cell, s, teacher_path, &n_per_class] {
                ExperimentConfig c = base;
                c.teacher_checkpoint = teacher_path;
                c.loss = distill_method_spec(base.loss, distill_method_labels()[cell.row]);
                c.n_per_class = n_per_class[cell.col];
                cell.accs[s] = train_run(c, base.seeds[s]).test_accuracy;
            });
        }
    }
    run_jobs(work, jobs);
    for (const auto& cell : cells) {
        grid.mean[cell.row][cell.col] = mean_of(cell.accs);
        grid.stdev[cell.row][cell.col] = stdev_of(cell.accs);
    }
    return grid;
}

GridResult robustness_grid(const ExperimentConfig& base, const std::vector<double>& lambdas,
                           const std::vector<double>& test_sigmas, int jobs) {
    JM_CHECK_CONFIG(!lambdas.empty() && !test_sigmas.empty(),
                    "robustness-grid: lambdas and test sigmas required");
    GridResult grid;
    for (double l : lambdas) grid.row_labels.push_back(strcat("lambda=", l));
    for (double s : test_sigmas) grid.col_labels.push_back(strcat("sigma=", s));
    grid.mean.assign(lambdas.size(), std::vector<double>(test_sigmas.size(), 0.0));
    grid.stdev.assign(lambdas.size(), std::vector<double>(test_sigmas.size(), 0.0));

    struct Cell {
        std::size_t row;
        std::vector<std::vector<double>> accs;  // [sigma][seed]
    };
    std::vector<Cell> cells(lambdas.size());
    for (std::size_t r = 0; r < lambdas.size(); ++r) {
        cells[r].row = r;
        cells[r].accs.assign(test_sigmas.size(),
                             std::vector<double>(base.seeds.size(), 0.0));
    }
    std::vector<std::function<void()>> work;
    for (std::size_t r = 0; r < lambdas.size(); ++r) {
        for (std::size_t s = 0; s < base.seeds.size(); ++s) {
            work.push_back([&base, &cells, r, s, &lambdas, &test_sigmas] {
                ExperimentConfig c = base;
                // the Prop-2 objective: squared-error data term + penalty
                c.loss.alpha = c.loss.beta = c.loss.gamma = 0.0;
                c.loss.mse_alpha = 1.0;
                c.loss.penalty_lambda = lambdas[r];
                c.test_noise_grid = test_sigmas;
                auto result = train_run(c, base.seeds[s]);
                for (std::size_t g = 0; g < test_sigmas.size(); ++g) {
                    cells[r].accs[g][s] = result.robustness[g].second;
                }
            });
        }
    }
    run_jobs(work, jobs);
    for (std::size_t r = 0; r < lambdas.size(); ++r) {
        for (std::size_t g = 0; g < test_sigmas.size(); ++g) {
            grid.mean[r][g] = mean_of(cells[r].accs[g]);
            grid.stdev[r][g] = stdev_of(cells[r].accs[g]);
        }
    }
    return grid;
}

namespace {

losses::LossSpec transfer_method_spec(const losses::LossSpec& base, const std::string& label) {
    // transfer weights are 10 or 0
    losses::LossSpec s = base;
    s.alpha = 10.0;
    s.beta = s.gamma = s.attention_beta = s.attention_gamma = 0.0;
    const bool match_act = label != "Cross-Entropy (CE) training on untrained student network" &&
                           label != "CE on pre-trained student network (Oracle)";
    if (match_act) s.beta = 10.0;
    if (label == "CE + match {activations + Jacobians}" ||
        label == "CE + match {activations + attention + Jacobians}") {
        s.attention_gamma = 10.0;
    }
    if (label == "CE + match {activations + attention}" ||
        label == "CE + match {activations + attention + Jacobians}") {
        s.attention_beta = 10.0;
    }
    return s;
}

}  // namespace

TransferResult transfer_run(const ExperimentConfig& base, int jobs) {
    JM_CHECK_CONFIG(base.transfer, "transfer: config must set transfer=true with a target_task");
    const std::string teacher_path = ensure_teacher(base);

    // oracle warm start: the same student architecture pretrained on the
    // source task; a one-headed checkpoint covers the trunk and source head
    ExperimentConfig oracle_pre = base;
    oracle_pre.teacher_arch = "vgg1s";
    const std::string oracle_path =
        (fs::path(base.out_dir) / "student-source-pretrain.ckpt").string();
    if (!fs::exists(oracle_path)) pretrain_teacher(oracle_pre, oracle_path, 2000);

    TransferResult result;
    result.accuracy.row_labels = transfer_method_labels();
    result.accuracy.col_labels = {"accuracy"};
    result.accuracy.mean.assign(result.accuracy.row_labels.size(), {0.0});
    result.accuracy.stdev.assign(result.accuracy.row_labels.size(), {0.0});

    struct Cell {
        std::vector<double> accs;
        std::vector<std::map<std::string, double>> reductions;
    };
    std::vector<Cell> cells(result.accuracy.row_labels.size());
    for (auto& c : cells) {
        c.accs.assign(base.seeds.size(), 0.0);
        c.reductions.resize(base.seeds.size());
    }

    std::vector<std::function<void()>> work;
    for (std::size_t r = 0; r < result.accuracy.row_labels.size(); ++r) {
        for (std::size_t s = 0; s < base.seeds.size(); ++s) {
            work.push_back([&, r, s] {
                const std::string& label = transfer_method_labels()[r];
                ExperimentConfig c = base;
                c.student_arch = "vgg1s-2h";
                c.teacher_checkpoint = teacher_path;
                c.loss = transfer_method_spec(base.loss, label);
                if (label == "CE on pre-trained student network (Oracle)") {
                    c.student_init_checkpoint = oracle_path;
                }
                auto run = train_run(c, base.seeds[s]);
                cells[r].accs[s] = run.test_accuracy;
                cells[r].reductions[s] = run.jacobian_loss_reduction;
            });
        }
    }
    run_jobs(work, jobs);

    for (std::size_t r = 0; r < cells.size(); ++r) {
        result.accuracy.mean[r][0] = mean_of(cells[r].accs);
        result.accuracy.stdev[r][0] = stdev_of(cells[r].accs);
        if (!cells[r].reductions[0].empty()) {
            std::map<std::string, double> avg;
            for (const auto& [tap, pct] : cells[r].reductions[0]) {
                std::vector<double> vals;
                for (const auto& m : cells[r].reductions) vals.push_back(m.at(tap));
                avg[tap] = mean_of(vals);
            }
            result.jacobian_reduction[result.accuracy.row_labels[r]] = avg;
        }
    }
    return result;
}

GridResult ablate(const ExperimentConfig& base, const std::string& axis, int jobs) {
    JM_CHECK_CONFIG(axis == "tap-depth" || axis == "pool-window",
                    "ablate: axis must be tap-depth or pool-window");
    JM_CHECK_CONFIG(base.transfer, "ablate: config must set transfer=true with a target_task");
    const std::string teacher_path = ensure_teacher(base);

    GridResult grid;
    grid.col_labels = {"accuracy", "jacobian_loss_reduction"};

    std::vector<ExperimentConfig> configs;
    if (axis == "tap-depth") {
        Rng dummy(0);
        nn::Network t = build_network(base.teacher_arch, base.task.sample_shape(),
                                      base.task.classes, base.task.classes, dummy);
        nn::Network s = build_network("vgg1s-2h", base.task.sample_shape(),
                                      base.target_task.classes, base.task.classes, dummy);
        const std::size_t depths = std::min(t.feature_taps.size(), s.feature_taps.size());
        for (std::size_t dpt = 0; dpt < depths; ++dpt) {
            ExperimentConfig c = base;
            c.student_arch = "vgg1s-2h";
            c.teacher_checkpoint = teacher_path;
            c.loss = transfer_method_spec(base.loss,
                                          "CE + match {activations + attention + Jacobians}");
            c.loss.tap_pairs = {{static_cast<int>(dpt), static_cast<int>(dpt)}};
            configs.push_back(c);
            grid.row_labels.push_back(strcat("depth(", dpt, ",", dpt, ")"));
        }
    } else {
        // attention-map side at the shallowest tap = input spatial size
        JM_CHECK_CONFIG(base.task.sample_shape().size() == 3,
                        "ablate pool-window: image-shaped task required");
        const int side = base.task.sample_shape()[1];
        const std::vector<std::pair<std::string, int>> windows = {
            {"full", side},
            {"s/3", std::max(1, side / 3)},
            {"s/5", std::max(1, side / 5)},
            {"s/7", std::max(1, side / 7)},
            {"none", 1},
        };
        for (const auto& [label, win] : windows) {
            ExperimentConfig c = base;
            c.student_arch = "vgg1s-2h";
            c.teacher_checkpoint = teacher_path;
            c.loss = transfer_method_spec(base.loss,
                                          "CE + match {activations + attention + Jacobians}");
            c.loss.tap_pairs = {{0, 0}};
            c.loss.jac_strategy.pool_window = win;
            configs.push_back(c);
            grid.row_labels.push_back(strcat(label, " (window ", win, ")"));
        }
    }

    grid.mean.assign(configs.size(), std::vector<double>(2, 0.0));
    grid.stdev.assign(configs.size(), std::vector<double>(2, 0.0));

    struct Cell {
        std::vector<double> accs;
        std::vector<double> reductions;
    };
    std::vector<Cell> cells(configs.size());
    for (auto& c : cells) {
        c.accs.assign(base.seeds.size(), 0.0);
        c.reductions.assign(base.seeds.size(), 0.0);
    }
    std::vector<std::function<void()>> work;
    for (std::size_t r = 0; r < configs.size(); ++r) {
        for (std::size_t s = 0; s < base.seeds.size(); ++s) {
            work.push_back([&, r, s] {
                auto run = train_run(configs[r], base.seeds[s]);
                cells[r].accs[s] = run.test_accuracy;
                if (!run.jacobian_loss_reduction.empty()) {
                    cells[r].reductions[s] = run.jacobian_loss_reduction.begin()->second;
                }
            });
        }
    }
    run_jobs(work, jobs);
    for (std::size_t r = 0; r < cells.size(); ++r) {
        grid.mean[r][0] = mean_of(cells[r].accs);
        grid.stdev[r][0] = stdev_of(cells[r].accs);
        grid.mean[r][1] = mean_of(cells[r].reductions);
        grid.stdev[r][1] = stdev_of(cells[r].reductions);
    }
    return grid;
}

}  // namespace jm::train
