#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/dataset.hpp"
#include "core/metrics.hpp"
#include "core/nn.hpp"

namespace tab {

struct TaskSpec {
    std::string generator;  // "even_odd" | "cmnist" | "tabd"
    size_t n_train = 0;
    size_t n_val = 0;
    double p = 0.5;
    uint64_t seed = 0;
    std::string idx_images, idx_labels;           // optional IDX source
    std::string train_path, val_path, test_path;  // when generator == "tabd"
};

struct MethodCandidate {
    std::string method;
    std::string id;           // e.g. "lr=0.001;wd=0"; "none" for tab
    std::string hyperparams;  // semicolon-joined key=value pairs
    std::optional<double> lr;
    std::optional<double> weight_decay;
    std::optional<double> gamma;
    std::optional<int> t_id;
    std::optional<int> lambda_up;
    bool lambda_ratio = false;
};

struct GridSpec {
    TaskSpec task;
    std::string model_kind = "mlp";  // "mlp" | "cnn6"
    std::vector<int> hidden = {64};
    TrainConfig base;
    std::vector<std::string> methods;
    std::vector<uint64_t> seeds;
    std::string out_dir;
    int workers = 0;  // 0 = hardware concurrency
    std::vector<MethodCandidate> candidates;  // across all methods, config order

    std::vector<const MethodCandidate*> candidates_for(const std::string& method) const;
};

// Parses the full grid config; rejects any hyperparameter candidates under
// [tab] (the pipeline takes none).
GridSpec parse_grid_spec(const ConfigFile& cfg);

struct TaskData {
    LabeledDataset train, val, test;
};

TaskData load_task(const TaskSpec& task);

struct CellResult {
    std::string method, candidate_id, hyperparams;
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double val_acc = 0.0, val_wga = 0.0;
    double test_wga = 0.0, test_acc_weighted = 0.0, test_acc_plain = 0.0;
    bool has_rebalance = false;
    RebalanceStats rebalance;
    int epochs_run = 0, identifier_epochs = 0;
    double wall_seconds = 0.0;
};

// Runs one (method, candidate, seed) cell, persisting checkpoint.tabm,
// eval.csv, cell.json, and for tab also history.tabh and manifest.json.
CellResult run_cell(const GridSpec& spec, const TaskData& data,
                    const MethodCandidate& cand, uint64_t seed,
                    const std::string& cell_dir);

struct GridRunOutcome {
    int failed = 0;
    GridResult aggregated;
};

// Executes every (candidate x seed) cell in a worker pool, persists per-cell
// artifacts plus grid_results.csv. Cell failures are recorded and the grid
// continues. config_text, when non-empty, is copied next to the results.
GridRunOutcome run_grid(const GridSpec& spec, const std::string& config_text = "");

// Re-runs a single cell from its config + seed (the reproducibility path).
// candidate_id may be empty when the method has exactly one candidate.
CellResult run_single_cell(const GridSpec& spec, const std::string& method,
                           const std::string& candidate_id, uint64_t seed,
                           const std::string& out_dir);

}  // namespace tab
