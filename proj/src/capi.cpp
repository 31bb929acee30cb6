#include "tab/tab.h"

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <sstream>
#include <string>
#include <unordered_set>

#include "core/baselines.hpp"
#include "core/config.hpp"
#include "core/dataset.hpp"
#include "core/grid.hpp"
#include "core/history.hpp"
#include "core/metrics.hpp"
#include "core/report.hpp"
#include "core/tab_pipeline.hpp"

struct tab_dataset {
    tab::LabeledDataset ds;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

// Runs fn, translating exceptions into status codes + tab_last_error().
template <typename Fn>
tab_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        set_error(e.what());
        const std::string what = e.what();
        if (what.find("magic") != std::string::npos ||
            what.find("version") != std::string::npos ||
            what.find("header claims") != std::string::npos ||
            what.find("corrupt") != std::string::npos) {
            return TAB_ERR_FORMAT;
        }
        if (what.find("cannot open") != std::string::npos ||
            what.find("write failed") != std::string::npos) {
            return TAB_ERR_IO;
        }
        if (what.find("config") != std::string::npos ||
            what.find("hyperparameters") != std::string::npos ||
            what.find("candidate") != std::string::npos) {
            return TAB_ERR_CONFIG;
        }
        return TAB_ERR_RUNTIME;
    } catch (...) {
        set_error("unknown error");
        return TAB_ERR_RUNTIME;
    }
}

tab_status need(bool ok, const char* msg) {
    if (!ok) {
        set_error(msg);
        return TAB_ERR_INVALID_ARGUMENT;
    }
    return TAB_OK;
}

tab::TrainConfig to_train_config(const tab_train_options& o) {
    tab::TrainConfig c;
    const std::string opt = o.optimizer ? o.optimizer : "adam";
    if (opt == "adam") {
        c.optimizer = tab::OptimizerKind::adam;
    } else if (opt == "sgd") {
        c.optimizer = tab::OptimizerKind::sgd;
    } else {
        throw std::runtime_error("unknown optimizer: " + opt);
    }
    c.lr = o.lr;
    c.weight_decay = o.weight_decay;
    c.momentum = o.momentum;
    c.batch_size = o.batch_size;
    c.max_epochs = o.max_epochs;
    c.patience = o.patience;
    c.min_delta = o.min_delta;
    c.plateau_factor = o.plateau_factor;
    c.plateau_patience = o.plateau_patience;
    return c;
}

tab::ModelSpec to_model_spec(const tab_train_options& o, const tab::LabeledDataset& ds) {
    tab::ModelSpec spec;
    const std::string kind = o.model ? o.model : "mlp";
    if (kind == "mlp") {
        spec.kind = tab::ModelKind::mlp;
    } else if (kind == "cnn6") {
        spec.kind = tab::ModelKind::cnn6;
    } else {
        throw std::runtime_error("unknown model kind: " + kind);
    }
    spec.in_channels = ds.channels;
    spec.in_height = ds.height;
    spec.in_width = ds.width;
    spec.num_classes = ds.num_classes;
    if (spec.kind == tab::ModelKind::mlp) {
        const std::string hidden = o.hidden ? o.hidden : "64";
        std::string cur;
        for (char ch : hidden + ",") {
            if (ch == ',') {
                if (!cur.empty()) {
                    spec.hidden.push_back(
                        static_cast<int>(tab::to_int(cur, "hidden width")));
                }
                cur.clear();
            } else if (!std::isspace(static_cast<unsigned char>(ch))) {
                cur.push_back(ch);
            }
        }
    }
    return spec;
}

void fill_metrics(tab_run_metrics* out, const tab::CellResult& r) {
    if (!out) return;
    *out = tab_run_metrics{};
    out->val_acc = r.val_acc;
    out->val_wga = r.val_wga;
    out->test_wga = r.test_wga;
    out->test_acc_weighted = r.test_acc_weighted;
    out->test_acc_plain = r.test_acc_plain;
    out->bc_fraction_before = r.rebalance.bc_fraction_before;
    out->bc_fraction_after = r.rebalance.bc_fraction_after;
    out->identified_fraction = r.rebalance.identified_fraction;
    out->epochs_run = r.epochs_run;
    out->identifier_epochs = r.identifier_epochs;
    out->wall_seconds = r.wall_seconds;
}

}  // namespace

extern "C" {

const char* tab_version(void) { return "1.0.0"; }

const char* tab_last_error(void) { return g_last_error.c_str(); }

tab_status tab_dataset_generate(const char* generator, uint64_t n_train, uint64_t n_val,
                                double p, uint64_t seed, const char* idx_images,
                                const char* idx_labels, tab_dataset** out_train,
                                tab_dataset** out_val, tab_dataset** out_test) {
    if (auto s = need(generator != nullptr, "generator is null")) return s;
    return guarded([&]() {
        tab::RawDigits digits;
        const tab::RawDigits* source = nullptr;
        if (idx_images && idx_images[0] != '\0') {
            if (!idx_labels || idx_labels[0] == '\0') {
                throw std::runtime_error("idx_labels required with idx_images");
            }
            digits = tab::import_idx(idx_images, idx_labels);
            source = &digits;
        }
        const std::string gen = generator;
        tab::GenResult r;
        if (gen == "even_odd") {
            r = tab::gen_even_odd(n_train, n_val, p, seed, source);
        } else if (gen == "cmnist") {
            r = tab::gen_cmnist(n_train, n_val, p, seed, source);
        } else {
            throw std::runtime_error("unknown generator: " + gen);
        }
        if (out_train) *out_train = new tab_dataset{std::move(r.train)};
        if (out_val) *out_val = new tab_dataset{std::move(r.val)};
        if (out_test) *out_test = new tab_dataset{std::move(r.test)};
        return TAB_OK;
    });
}

tab_status tab_dataset_read(const char* path, tab_dataset** out) {
    if (auto s = need(path && out, "path and out must be non-null")) return s;
    return guarded([&]() {
        *out = new tab_dataset{tab::read_tabd(path)};
        return TAB_OK;
    });
}

tab_status tab_dataset_write(const tab_dataset* ds, const char* path) {
    if (auto s = need(ds && path, "dataset and path must be non-null")) return s;
    return guarded([&]() {
        tab::write_tabd(ds->ds, path);
        return TAB_OK;
    });
}

tab_status tab_dataset_info(const tab_dataset* ds, uint64_t* n, uint32_t* channels,
                            uint32_t* height, uint32_t* width, uint32_t* num_classes,
                            uint32_t* num_groups) {
    if (auto s = need(ds != nullptr, "dataset is null")) return s;
    if (n) *n = ds->ds.size();
    if (channels) *channels = static_cast<uint32_t>(ds->ds.channels);
    if (height) *height = static_cast<uint32_t>(ds->ds.height);
    if (width) *width = static_cast<uint32_t>(ds->ds.width);
    if (num_classes) *num_classes = static_cast<uint32_t>(ds->ds.num_classes);
    if (num_groups) *num_groups = static_cast<uint32_t>(ds->ds.num_groups);
    return TAB_OK;
}

void tab_dataset_free(tab_dataset* ds) { delete ds; }

void tab_train_options_init(tab_train_options* opts) {
    if (!opts) return;
    *opts = tab_train_options{};
    opts->model = "mlp";
    opts->hidden = "64";
    opts->optimizer = "adam";
    opts->lr = 1e-3;
    opts->weight_decay = 0.0;
    opts->momentum = 0.9;
    opts->batch_size = 512;
    opts->max_epochs = 100;
    opts->patience = 5;
    opts->min_delta = 0.001;
    opts->plateau_factor = 0.1;
    opts->plateau_patience = 10;
    opts->jtt_t_id = 5;
    opts->jtt_lambda_up = "ratio";
    opts->gdro_gamma = 0.01;
}

tab_status tab_run_method(const char* method, const tab_dataset* train,
                          const tab_dataset* val, const tab_dataset* test,
                          const tab_train_options* opts, uint64_t seed,
                          const char* out_dir, tab_run_metrics* out_metrics) {
    if (auto s = need(method && train && val && test && opts,
                      "method, datasets, and options must be non-null")) {
        return s;
    }
    return guarded([&]() {
        tab::GridSpec spec;
        spec.model_kind = opts->model ? opts->model : "mlp";
        spec.hidden.clear();
        const tab::ModelSpec mspec = to_model_spec(*opts, train->ds);
        spec.hidden = mspec.hidden;
        spec.base = to_train_config(*opts);

        tab::MethodCandidate cand;
        cand.method = method;
        const std::string m = method;
        if (m == "tab") {
            cand.id = "none";
        } else if (m == "jtt") {
            cand.t_id = opts->jtt_t_id;
            const std::string up = opts->jtt_lambda_up ? opts->jtt_lambda_up : "ratio";
            if (up == "ratio") {
                cand.lambda_ratio = true;
            } else {
                cand.lambda_up = static_cast<int>(tab::to_int(up, "jtt lambda_up"));
            }
            cand.id = "T=" + std::to_string(opts->jtt_t_id) + ";lup=" + up;
            cand.hyperparams = "t_id=" + std::to_string(opts->jtt_t_id) +
                               ";lambda_up=" + up;
        } else if (m == "erm" || m == "gdro") {
            cand.lr = opts->lr;
            cand.weight_decay = opts->weight_decay;
            cand.id = "lr=" + std::to_string(opts->lr) +
                      ";wd=" + std::to_string(opts->weight_decay);
            cand.hyperparams = "lr=" + std::to_string(opts->lr) +
                               ";weight_decay=" + std::to_string(opts->weight_decay);
            if (m == "gdro") cand.gamma = opts->gdro_gamma;
        } else {
            throw std::runtime_error("unknown method: " + m);
        }

        tab::TaskData data;
        data.train = train->ds;
        data.val = val->ds;
        data.test = test->ds;

        std::string dir = out_dir ? out_dir : "";
        if (dir.empty()) {
            dir = (std::filesystem::temp_directory_path() /
                   ("tab_run_" + std::to_string(
                                     std::chrono::steady_clock::now().time_since_epoch()
                                         .count())))
                      .string();
        }
        const tab::CellResult r = tab::run_cell(spec, data, cand, seed, dir);
        if (!r.ok) throw std::runtime_error(r.error);
        fill_metrics(out_metrics, r);
        return TAB_OK;
    });
}

tab_status tab_eval_checkpoint(const char* model_path, const tab_dataset* data,
                               const tab_dataset* weight_ref_train,
                               const char* out_csv_path, double* out_mean_acc,
                               double* out_wga, double* out_weighted_acc) {
    if (auto s = need(model_path && data, "model path and dataset must be non-null")) {
        return s;
    }
    return guarded([&]() {
        const tab::Model model = tab::read_tabm(model_path);
        const tab::EvalRecord r = tab::evaluate(model, data->ds);
        if (out_csv_path) tab::write_eval_csv(r, out_csv_path);
        if (out_mean_acc) *out_mean_acc = tab::mean_accuracy(r);
        if (out_wga) *out_wga = r.has_groups() ? tab::wga(r) : 0.0;
        if (out_weighted_acc) {
            *out_weighted_acc = tab::mean_accuracy(r);
            if (weight_ref_train && weight_ref_train->ds.has_groups() &&
                r.has_groups()) {
                const tab::GroupWeights w =
                    tab::group_weights(weight_ref_train->ds, data->ds);
                *out_weighted_acc = tab::weighted_mean_acc(r, w);
            }
        }
        return TAB_OK;
    });
}

tab_status tab_grid_run(const char* config_path, const char* out_dir_override,
                        int32_t* out_failed_cells) {
    if (auto s = need(config_path != nullptr, "config path is null")) return s;
    return guarded([&]() {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config: " + std::string(config_path));
        std::ostringstream buf;
        buf << in.rdbuf();
        const std::string text = buf.str();
        tab::GridSpec spec = tab::parse_grid_spec(tab::ConfigFile::parse(text));
        if (out_dir_override && out_dir_override[0] != '\0') {
            spec.out_dir = out_dir_override;
        }
        const tab::GridRunOutcome outcome = tab::run_grid(spec, text);
        if (out_failed_cells) *out_failed_cells = outcome.failed;
        return TAB_OK;
    });
}

tab_status tab_cell_run(const char* config_path, const char* method,
                        const char* candidate_id, uint64_t seed, const char* out_dir,
                        tab_run_metrics* out_metrics) {
    if (auto s = need(config_path && method && out_dir,
                      "config path, method, and out_dir must be non-null")) {
        return s;
    }
    return guarded([&]() {
        const tab::GridSpec spec =
            tab::parse_grid_spec(tab::ConfigFile::parse_file(config_path));
        const tab::CellResult r = tab::run_single_cell(
            spec, method, candidate_id ? candidate_id : "", seed, out_dir);
        if (!r.ok) throw std::runtime_error(r.error);
        fill_metrics(out_metrics, r);
        return TAB_OK;
    });
}

tab_status tab_report_write(const char* results_dir) {
    if (auto s = need(results_dir != nullptr, "results dir is null")) return s;
    return guarded([&]() {
        tab::write_report(results_dir);
        return TAB_OK;
    });
}

tab_status tab_report_text(const char* results_dir, char** out_text) {
    if (auto s = need(results_dir && out_text, "results dir and out must be non-null")) {
        return s;
    }
    return guarded([&]() {
        const tab::ReportOutput r = tab::render_report(results_dir);
        char* buf = static_cast<char*>(std::malloc(r.text.size() + 1));
        if (!buf) throw std::bad_alloc();
        std::memcpy(buf, r.text.c_str(), r.text.size() + 1);
        *out_text = buf;
        return TAB_OK;
    });
}

void tab_string_free(char* s) { std::free(s); }

}  // extern "C"
