#include "core/grid.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include "core/baselines.hpp"
#include "core/history.hpp"
#include "core/rng.hpp"
#include "core/tab_pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string sanitize(const std::string& s) {
    std::string out;
    for (char ch : s) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                        (ch >= '0' && ch <= '9') || ch == '.' || ch == '-' ||
                        ch == '_' || ch == '=';
        out.push_back(ok ? ch : '_');
    }
    return out;
}

std::vector<std::string> list_or_default(const ConfigFile& cfg, const std::string& sec,
                                         const std::string& key,
                                         const std::string& fallback) {
    auto v = cfg.get_list(sec, key);
    if (v.empty()) v.push_back(fallback);
    return v;
}

void append_erm_like_candidates(const ConfigFile& cfg, const std::string& method,
                                const TrainConfig& base, GridSpec& spec) {
    char base_lr[32], base_wd[32];
    std::snprintf(base_lr, sizeof(base_lr), "%g", base.lr);
    std::snprintf(base_wd, sizeof(base_wd), "%g", base.weight_decay);
    const auto lrs = list_or_default(cfg, method, "lr", base_lr);
    const auto wds = list_or_default(cfg, method, "weight_decay", base_wd);
    const auto gammas = method == "gdro" ? list_or_default(cfg, method, "gamma", "0.01")
                                         : std::vector<std::string>{""};
    for (const auto& lr : lrs) {
        for (const auto& wd : wds) {
            for (const auto& gm : gammas) {
                MethodCandidate c;
                c.method = method;
                c.lr = to_double(lr, method + " lr");
                c.weight_decay = to_double(wd, method + " weight_decay");
                c.id = "lr=" + lr + ";wd=" + wd;
                c.hyperparams = "lr=" + lr + ";weight_decay=" + wd;
                if (!gm.empty()) {
                    c.gamma = to_double(gm, "gdro gamma");
                    c.id += ";gamma=" + gm;
                    c.hyperparams += ";gamma=" + gm;
                }
                spec.candidates.push_back(std::move(c));
            }
        }
    }
}

void append_jtt_candidates(const ConfigFile& cfg, GridSpec& spec) {
    const auto tids = list_or_default(cfg, "jtt", "t_id", "5");
    const auto ups = list_or_default(cfg, "jtt", "lambda_up", "ratio");
    for (const auto& t : tids) {
        for (const auto& up : ups) {
            MethodCandidate c;
            c.method = "jtt";
            c.t_id = static_cast<int>(to_int(t, "jtt t_id"));
            if (up == "ratio") {
                c.lambda_ratio = true;
            } else {
                c.lambda_up = static_cast<int>(to_int(up, "jtt lambda_up"));
            }
            c.id = "T=" + t + ";lup=" + up;
            c.hyperparams = "t_id=" + t + ";lambda_up=" + up;
            spec.candidates.push_back(std::move(c));
        }
    }
}

ModelSpec make_model_spec(const GridSpec& spec, const LabeledDataset& train) {
    ModelSpec m;
    m.kind = spec.model_kind == "cnn6" ? ModelKind::cnn6 : ModelKind::mlp;
    m.in_channels = train.channels;
    m.in_height = train.height;
    m.in_width = train.width;
    m.num_classes = train.num_classes;
    m.hidden = spec.hidden;
    return m;
}

void write_cell_json(const std::string& dir, const CellResult& r, const TaskSpec& task) {
    nlohmann::json j;
    j["method"] = r.method;
    j["candidate_id"] = r.candidate_id;
    j["hyperparams"] = r.hyperparams;
    j["seed"] = r.seed;
    j["ok"] = r.ok;
    if (!r.ok) j["error"] = r.error;
    nlohmann::json t;
    t["generator"] = task.generator;
    t["p"] = task.p;
    t["n_train"] = task.n_train;
    t["n_val"] = task.n_val;
    t["seed"] = task.seed;
    j["task"] = t;
    if (r.ok) {
        nlohmann::json m;
        m["val_acc"] = r.val_acc;
        m["val_wga"] = r.val_wga;
        m["test_wga"] = r.test_wga;
        m["test_acc_weighted"] = r.test_acc_weighted;
        m["test_acc_plain"] = r.test_acc_plain;
        j["metrics"] = m;
        j["epochs_run"] = r.epochs_run;
        if (r.identifier_epochs > 0) j["identifier_epochs"] = r.identifier_epochs;
        if (r.has_rebalance) {
            nlohmann::json rb;
            rb["bc_fraction_before"] = r.rebalance.bc_fraction_before;
            rb["bc_fraction_after"] = r.rebalance.bc_fraction_after;
            rb["identified_fraction"] = r.rebalance.identified_fraction;
            j["rebalance"] = rb;
        }
    }
    j["wall_seconds"] = r.wall_seconds;
    std::ofstream out(dir + "/cell.json");
    if (!out) fail("cannot write cell.json in " + dir);
    out << j.dump(2) << "\n";
}

}  // namespace

std::vector<const MethodCandidate*> GridSpec::candidates_for(
    const std::string& method) const {
    std::vector<const MethodCandidate*> out;
    for (const auto& c : candidates) {
        if (c.method == method) out.push_back(&c);
    }
    return out;
}

GridSpec parse_grid_spec(const ConfigFile& cfg) {
    GridSpec spec;

    spec.task.generator = cfg.require("task", "generator");
    if (spec.task.generator == "tabd") {
        spec.task.train_path = cfg.require("task", "train_path");
        spec.task.val_path = cfg.require("task", "val_path");
        spec.task.test_path = cfg.require("task", "test_path");
    } else if (spec.task.generator == "even_odd" || spec.task.generator == "cmnist") {
        spec.task.n_train = to_u64(cfg.require("task", "n_train"), "n_train");
        spec.task.n_val = to_u64(cfg.require("task", "n_val"), "n_val");
        spec.task.p = to_double(cfg.require("task", "p"), "p");
        spec.task.seed = to_u64(cfg.get_or("task", "seed", "0"), "task seed");
        spec.task.idx_images = cfg.get_or("task", "idx_images", "");
        spec.task.idx_labels = cfg.get_or("task", "idx_labels", "");
    } else {
        fail("unknown generator: " + spec.task.generator);
    }

    spec.model_kind = cfg.get_or("model", "kind", "mlp");
    if (spec.model_kind != "mlp" && spec.model_kind != "cnn6") {
        fail("unknown model kind: " + spec.model_kind);
    }
    spec.hidden.clear();
    for (const auto& h : list_or_default(cfg, "model", "hidden", "64")) {
        spec.hidden.push_back(static_cast<int>(to_int(h, "model hidden")));
    }

    TrainConfig& b = spec.base;
    const std::string opt = cfg.get_or("train", "optimizer", "adam");
    if (opt == "adam") {
        b.optimizer = OptimizerKind::adam;
    } else if (opt == "sgd") {
        b.optimizer = OptimizerKind::sgd;
    } else {
        fail("unknown optimizer: " + opt);
    }
    b.lr = to_double(cfg.get_or("train", "lr", "0.001"), "lr");
    b.weight_decay = to_double(cfg.get_or("train", "weight_decay", "0"), "weight_decay");
    b.momentum = to_double(cfg.get_or("train", "momentum", "0.9"), "momentum");
    b.batch_size = static_cast<int>(to_int(cfg.get_or("train", "batch_size", "512"),
                                           "batch_size"));
    b.max_epochs = static_cast<int>(to_int(cfg.get_or("train", "max_epochs", "100"),
                                           "max_epochs"));
    b.patience = static_cast<int>(to_int(cfg.get_or("train", "patience", "5"),
                                         "patience"));
    b.min_delta = to_double(cfg.get_or("train", "min_delta", "0.001"), "min_delta");
    b.plateau_factor =
        to_double(cfg.get_or("train", "plateau_factor", "0.1"), "plateau_factor");
    b.plateau_patience = static_cast<int>(
        to_int(cfg.get_or("train", "plateau_patience", "10"), "plateau_patience"));

    spec.methods = cfg.get_list("grid", "methods");
    if (spec.methods.empty()) fail("config lists no methods under [grid]");
    for (const auto& s : cfg.get_list("grid", "seeds")) {
        spec.seeds.push_back(to_u64(s, "grid seed"));
    }
    if (spec.seeds.empty()) spec.seeds.push_back(0);
    spec.out_dir = cfg.get_or("grid", "out", "runs/out");
    spec.workers = static_cast<int>(to_int(cfg.get_or("grid", "workers", "0"),
                                           "workers"));

    const std::unordered_set<std::string> known = {"erm", "tab", "jtt", "gdro"};
    for (const auto& m : spec.methods) {
        if (!known.count(m)) fail("unknown method: " + m);
        if (m == "tab") {
            const auto* sec = cfg.section("tab");
            if (sec && !sec->entries.empty()) {
                fail("tab takes no hyperparameters");
            }
            MethodCandidate c;
            c.method = "tab";
            c.id = "none";
            c.hyperparams = "";
            spec.candidates.push_back(std::move(c));
        } else if (m == "jtt") {
            append_jtt_candidates(cfg, spec);
        } else {
            append_erm_like_candidates(cfg, m, b, spec);
        }
    }
    return spec;
}

TaskData load_task(const TaskSpec& task) {
    TaskData data;
    if (task.generator == "tabd") {
        data.train = read_tabd(task.train_path);
        data.val = read_tabd(task.val_path);
        data.test = read_tabd(task.test_path);
        return data;
    }
    RawDigits digits;
    const RawDigits* source = nullptr;
    if (!task.idx_images.empty()) {
        digits = import_idx(task.idx_images, task.idx_labels);
        source = &digits;
    }
    GenResult gen = task.generator == "even_odd"
                        ? gen_even_odd(task.n_train, task.n_val, task.p, task.seed, source)
                        : gen_cmnist(task.n_train, task.n_val, task.p, task.seed, source);
    data.train = std::move(gen.train);
    data.val = std::move(gen.val);
    data.test = std::move(gen.test);
    return data;
}

CellResult run_cell(const GridSpec& spec, const TaskData& data,
                    const MethodCandidate& cand, uint64_t seed,
                    const std::string& cell_dir) {
    CellResult r;
    r.method = cand.method;
    r.candidate_id = cand.id;
    r.hyperparams = cand.hyperparams;
    r.seed = seed;
    fs::create_directories(cell_dir);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const ModelSpec mspec = make_model_spec(spec, data.train);
        TrainConfig cfg = spec.base;
        if (cand.lr) cfg.lr = *cand.lr;
        if (cand.weight_decay) cfg.weight_decay = *cand.weight_decay;

        TrainResult* final_train = nullptr;
        EvalRecord eval;
        ErmResult erm;
        JttResult jtt;
        GdroResult gdro;
        TabRunResult tabr;
        if (cand.method == "erm") {
            erm = run_erm(mspec, data.train, data.val, data.test, cfg, seed);
            final_train = &erm.train_result;
            eval = std::move(erm.eval);
        } else if (cand.method == "jtt") {
            JttConfig jcfg;
            jcfg.t_id = cand.t_id.value_or(5);
            jcfg.ratio = cand.lambda_ratio;
            jcfg.lambda_up = cand.lambda_up.value_or(1);
            jtt = run_jtt(mspec, data.train, data.val, data.test, cfg, jcfg, seed);
            final_train = &jtt.train_result;
            eval = std::move(jtt.eval);
            r.identifier_epochs = jtt.identifier.epochs_run;
        } else if (cand.method == "gdro") {
            gdro = run_gdro(mspec, data.train, data.val, data.test, cfg,
                            cand.gamma.value_or(0.01), seed);
            final_train = &gdro.train_result;
            eval = std::move(gdro.eval);
        } else if (cand.method == "tab") {
            tabr = run_tab(mspec, data.train, data.val, &data.test, cfg, seed);
            final_train = &tabr.robust;
            eval.predictions = tabr.test_predictions;
            eval.labels = data.test.labels;
            eval.groups = data.test.groups;
            eval.num_groups = data.test.num_groups;
            r.identifier_epochs = tabr.identifier.epochs_run;
            write_tabh(tabr.history, cell_dir + "/history.tabh");
            write_manifest(tabr.manifest, cell_dir + "/manifest.json");
            if (data.train.has_groups() &&
                data.train.num_groups % data.train.num_classes == 0) {
                const auto bc = bias_conflicting_groups(data.train.num_classes,
                                                        data.train.num_groups);
                std::unordered_set<int> bc_set(bc.begin(), bc.end());
                r.rebalance = rebalance_stats(tabr.partition, tabr.manifest,
                                              data.train.groups, bc_set);
                r.has_rebalance = true;
            }
        } else {
            fail("unknown method: " + cand.method);
        }

        r.epochs_run = final_train->epochs_run;
        write_tabm(final_train->model, cell_dir + "/checkpoint.tabm");
        write_eval_csv(eval, cell_dir + "/eval.csv");

        const EvalRecord on_val =
            evaluate(final_train->model, data.val, spec.base.batch_size);
        r.val_acc = mean_accuracy(on_val);
        r.val_wga = on_val.has_groups() ? wga(on_val) : 0.0;
        r.test_wga = eval.has_groups() ? wga(eval) : 0.0;
        r.test_acc_plain = mean_accuracy(eval);
        if (data.train.has_groups() && eval.has_groups()) {
            const GroupWeights w = group_weights(data.train, data.test);
            r.test_acc_weighted = weighted_mean_acc(eval, w);
        } else {
            r.test_acc_weighted = r.test_acc_plain;
        }
        r.ok = true;
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                         .count();
    write_cell_json(cell_dir, r, spec.task);
    return r;
}

GridRunOutcome run_grid(const GridSpec& spec, const std::string& config_text) {
    fs::create_directories(spec.out_dir);
    if (!config_text.empty()) {
        std::ofstream copy(spec.out_dir + "/config.ini");
        copy << config_text;
    }
    const TaskData data = load_task(spec.task);

    struct Cell {
        const MethodCandidate* cand;
        uint64_t seed;
        std::string dir;
    };
    std::vector<Cell> cells;
    for (const auto& method : spec.methods) {
        for (const auto* cand : spec.candidates_for(method)) {
            for (uint64_t seed : spec.seeds) {
                const std::string dir = spec.out_dir + "/cells/" + method + "/" +
                                        sanitize(cand->id) + "/s" + std::to_string(seed);
                cells.push_back({cand, seed, dir});
            }
        }
    }

    std::vector<CellResult> results(cells.size());
    std::atomic<size_t> next{0};
    int workers = spec.workers > 0
                      ? spec.workers
                      : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            results[i] = run_cell(spec, data, *cells[i].cand, cells[i].seed,
                                  cells[i].dir);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    GridRunOutcome out;
    for (const auto& r : results) {
        if (!r.ok) ++out.failed;
    }

    // aggregate per (method, candidate) over successful seeds
    for (const auto& method : spec.methods) {
        for (const auto* cand : spec.candidates_for(method)) {
            GridCandidate row;
            row.method = method;
            row.candidate_id = cand->id;
            row.hyperparams = cand->hyperparams;
            for (const auto& r : results) {
                if (!r.ok || r.method != method || r.candidate_id != cand->id) continue;
                ++row.seed_count;
                row.val_acc_mean += r.val_acc;
                row.val_wga_mean += r.val_wga;
                row.test_wga_mean += r.test_wga;
                row.test_acc_mean += r.test_acc_weighted;
            }
            if (row.seed_count > 0) {
                row.val_acc_mean /= row.seed_count;
                row.val_wga_mean /= row.seed_count;
                row.test_wga_mean /= row.seed_count;
                row.test_acc_mean /= row.seed_count;
                out.aggregated.rows.push_back(std::move(row));
            }
        }
    }
    write_grid_csv(out.aggregated, spec.out_dir + "/grid_results.csv");
    return out;
}

CellResult run_single_cell(const GridSpec& spec, const std::string& method,
                           const std::string& candidate_id, uint64_t seed,
                           const std::string& out_dir) {
    const auto cands = spec.candidates_for(method);
    if (cands.empty()) fail("method " + method + " has no candidates in this config");
    const MethodCandidate* pick = nullptr;
    if (candidate_id.empty()) {
        if (cands.size() != 1) {
            fail("method " + method + " has several candidates; pass --candidate");
        }
        pick = cands.front();
    } else {
        for (const auto* c : cands) {
            if (c->id == candidate_id) pick = c;
        }
        if (!pick) fail("no candidate with id '" + candidate_id + "'");
    }
    const TaskData data = load_task(spec.task);
    return run_cell(spec, data, *pick, seed, out_dir);
}

}  // namespace tab
