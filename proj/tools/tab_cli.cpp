// Command-line front end. Links only the public C API (tab/tab.h).

#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "tab/tab.h"

namespace {

int die(tab_status status, const std::string& context) {
    std::fprintf(stderr, "error: %s: %s\n", context.c_str(), tab_last_error());
    return static_cast<int>(status);
}

struct GenArgs {
    std::string generator = "even_odd";
    uint64_t n_train = 20000;
    uint64_t n_val = 2000;
    double p = 0.99;
    uint64_t seed = 0;
    std::string idx_images, idx_labels;
    std::string out = ".";
};

int cmd_gen(const GenArgs& a) {
    tab_dataset* train = nullptr;
    tab_dataset* val = nullptr;
    tab_dataset* test = nullptr;
    tab_status s = tab_dataset_generate(
        a.generator.c_str(), a.n_train, a.n_val, a.p, a.seed,
        a.idx_images.empty() ? nullptr : a.idx_images.c_str(),
        a.idx_labels.empty() ? nullptr : a.idx_labels.c_str(), &train, &val, &test);
    if (s != TAB_OK) return die(s, "gen");
    const std::string base = a.out + "/";
    struct {
        tab_dataset* ds;
        const char* name;
    } splits[] = {{train, "train.tabd"}, {val, "val.tabd"}, {test, "test.tabd"}};
    for (const auto& split : splits) {
        const std::string path = base + split.name;
        s = tab_dataset_write(split.ds, path.c_str());
        if (s != TAB_OK) return die(s, "writing " + path);
        uint64_t n = 0;
        uint32_t c = 0, h = 0, w = 0, classes = 0, groups = 0;
        tab_dataset_info(split.ds, &n, &c, &h, &w, &classes, &groups);
        std::printf("%s: %llu samples (%ux%ux%u), L=%u, k=%u\n", path.c_str(),
                    static_cast<unsigned long long>(n), c, h, w, classes, groups);
    }
    tab_dataset_free(train);
    tab_dataset_free(val);
    tab_dataset_free(test);
    return 0;
}

void print_metrics(const tab_run_metrics& m) {
    std::printf("val_acc=%.4f val_wga=%.4f test_wga=%.4f test_acc(weighted)=%.4f "
                "test_acc(plain)=%.4f epochs=%d",
                m.val_acc, m.val_wga, m.test_wga, m.test_acc_weighted, m.test_acc_plain,
                m.epochs_run);
    if (m.identifier_epochs > 0) std::printf(" identifier_epochs=%d", m.identifier_epochs);
    if (m.bc_fraction_after > 0.0) {
        std::printf(" bc_before=%.4f bc_after=%.4f identified=%.4f",
                    m.bc_fraction_before, m.bc_fraction_after, m.identified_fraction);
    }
    std::printf(" wall=%.1fs\n", m.wall_seconds);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TAB bias-mitigation pipeline"};
    app.require_subcommand(1);

    // gen
    GenArgs gen;
    auto* cgen = app.add_subcommand("gen", "generate a synthetic biased dataset");
    cgen->add_option("--generator", gen.generator, "even_odd | cmnist");
    cgen->add_option("--n-train", gen.n_train, "training samples");
    cgen->add_option("--n-val", gen.n_val, "validation samples");
    cgen->add_option("--p", gen.p, "spurious correlation strength in [0.5, 1]");
    cgen->add_option("--seed", gen.seed, "generator seed");
    cgen->add_option("--idx-images", gen.idx_images, "IDX images file (optional)");
    cgen->add_option("--idx-labels", gen.idx_labels, "IDX labels file (optional)");
    cgen->add_option("--out", gen.out, "output directory");

    // train (single grid cell, reproducible from config + seed)
    std::string train_config, train_method, train_candidate, train_out = "run_out";
    uint64_t train_seed = 0;
    auto* ctrain = app.add_subcommand("train", "run one method cell from a config");
    ctrain->add_option("--config", train_config, "grid config file")->required();
    ctrain->add_option("--method", train_method, "erm | tab | jtt | gdro")->required();
    ctrain->add_option("--candidate", train_candidate,
                       "candidate id (optional when unique)");
    ctrain->add_option("--seed", train_seed, "run seed");
    ctrain->add_option("--out", train_out, "output directory");

    // eval
    std::string eval_model, eval_data, eval_train_ref, eval_csv;
    auto* ceval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    ceval->add_option("--model", eval_model, "TABM checkpoint")->required();
    ceval->add_option("--data", eval_data, "TABD dataset")->required();
    ceval->add_option("--train-ref", eval_train_ref,
                      "TABD training set for distribution weights (optional)");
    ceval->add_option("--out", eval_csv, "per-sample eval CSV (optional)");

    // grid
    std::string grid_config, grid_out;
    auto* cgrid = app.add_subcommand("grid", "run a full method/candidate/seed grid");
    cgrid->add_option("--config", grid_config, "grid config file")->required();
    cgrid->add_option("--out", grid_out, "override the config's output directory");

    // report
    std::string report_dir;
    auto* creport = app.add_subcommand("report", "aggregate results into tables");
    creport->add_option("--results", report_dir, "results directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (cgen->parsed()) return cmd_gen(gen);

    if (ctrain->parsed()) {
        tab_run_metrics m{};
        const tab_status s = tab_cell_run(
            train_config.c_str(), train_method.c_str(),
            train_candidate.empty() ? nullptr : train_candidate.c_str(), train_seed,
            train_out.c_str(), &m);
        if (s != TAB_OK) return die(s, "train");
        print_metrics(m);
        return 0;
    }

    if (ceval->parsed()) {
        tab_dataset* data = nullptr;
        tab_dataset* ref = nullptr;
        tab_status s = tab_dataset_read(eval_data.c_str(), &data);
        if (s != TAB_OK) return die(s, "reading " + eval_data);
        if (!eval_train_ref.empty()) {
            s = tab_dataset_read(eval_train_ref.c_str(), &ref);
            if (s != TAB_OK) return die(s, "reading " + eval_train_ref);
        }
        double mean_acc = 0, wga = 0, weighted = 0;
        s = tab_eval_checkpoint(eval_model.c_str(), data, ref,
                                eval_csv.empty() ? nullptr : eval_csv.c_str(),
                                &mean_acc, &wga, &weighted);
        if (s != TAB_OK) return die(s, "eval");
        std::printf("mean_acc=%.4f wga=%.4f weighted_acc=%.4f\n", mean_acc, wga,
                    weighted);
        tab_dataset_free(data);
        tab_dataset_free(ref);
        return 0;
    }

    if (cgrid->parsed()) {
        int32_t failed = 0;
        const tab_status s = tab_grid_run(
            grid_config.c_str(), grid_out.empty() ? nullptr : grid_out.c_str(), &failed);
        if (s != TAB_OK) return die(s, "grid");
        if (failed > 0) {
            std::fprintf(stderr, "grid finished with %d failed cell(s)\n", failed);
            return 1;
        }
        std::printf("grid complete\n");
        return 0;
    }

    if (creport->parsed()) {
        const tab_status s = tab_report_write(report_dir.c_str());
        if (s != TAB_OK) return die(s, "report");
        char* text = nullptr;
        if (tab_report_text(report_dir.c_str(), &text) == TAB_OK) {
            std::fputs(text, stdout);
            tab_string_free(text);
        }
        return 0;
    }
    return 0;
}
