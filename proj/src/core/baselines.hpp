#pragma once

#include <cstdint>

#include "core/dataset.hpp"
#include "core/metrics.hpp"
#include "core/nn.hpp"

namespace tab {

struct ErmResult {
    TrainResult train_result;
    EvalRecord eval;
};

// Plain ERM: one train() call with validation-accuracy early stopping,
// evaluated on the test set.
ErmResult run_erm(const ModelSpec& spec, const LabeledDataset& train_ds,
                  const LabeledDataset& val_ds, const LabeledDataset& test_ds,
                  const TrainConfig& config, uint64_t seed);

struct JttConfig {
    int t_id = 1;          // identifier epochs, no early stopping
    int lambda_up = 1;     // ignored when ratio is set
    bool ratio = false;    // lambda_up = round(|correct| / |E|), floor 1
};

struct JttResult {
    TrainResult identifier;
    TrainResult train_result;  // second pass
    EvalRecord eval;
    size_t error_set_size = 0;
    int lambda_up_used = 1;
    bool empty_error_set = false;  // proceeded as ERM with a warning
};

// Two-pass JTT: identifier trained for exactly t_id epochs; every training
// sample it mispredicts is included lambda_up times in the second-pass set,
// so N' = N + (lambda_up - 1) * |E|.
JttResult run_jtt(const ModelSpec& spec, const LabeledDataset& train_ds,
                  const LabeledDataset& val_ds, const LabeledDataset& test_ds,
                  const TrainConfig& config, const JttConfig& jtt, uint64_t seed);

// Per-group weights on the k-simplex with exponential multiplicative updates.
struct GdroState {
    std::vector<double> q;
    double gamma = 0.01;

    // group_mean_losses entries < 0 mark groups absent from the batch; their
    // weight is left unchanged before renormalization.
    void update(const std::vector<double>& group_mean_losses);
};

struct GdroResult {
    TrainResult train_result;
    EvalRecord eval;
    double max_simplex_violation = 0.0;  // max |sum q - 1| seen after updates
};

// Stable online G-DRO: per batch, q_g <- q_g * exp(gamma * mean loss of g),
// renormalized; the batch objective is sum_g q_g * mean loss of g. Uses true
// training group labels and validation-WGA model selection.
GdroResult run_gdro(const ModelSpec& spec, const LabeledDataset& train_ds,
                    const LabeledDataset& val_ds, const LabeledDataset& test_ds,
                    const TrainConfig& config, double gamma, uint64_t seed);

}  // namespace tab
