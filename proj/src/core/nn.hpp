#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/dataset.hpp"

namespace tab {

enum class ModelKind { mlp, cnn6 };
enum class OptimizerKind { adam, sgd };
enum class Monitor { train_acc, val_acc, val_wga };

struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    int in_channels = 0;
    int in_height = 0;
    int in_width = 0;
    int num_classes = 0;
    std::vector<int> hidden;  // mlp only; layer widths between input and head

    // cnn6 layer plan: 3x3 kernels, same padding, ReLU after each conv,
    // one linear head on the flattened last feature map.
    static constexpr int kConvChannels[6] = {16, 16, 32, 32, 64, 64};

    size_t input_values() const {
        return static_cast<size_t>(in_channels) * in_height * in_width;
    }

    struct Tensor {
        std::string name;
        size_t offset = 0;
        size_t count = 0;
        size_t fan_in = 0;  // 0 for biases (zero-initialized)
    };
    std::vector<Tensor> layout() const;
    size_t param_count() const;
    void validate() const;
};

struct Model {
    ModelSpec spec;
    std::vector<double> params;  // flat, per spec.layout()
    uint64_t init_seed = 0;
};

// He-style fan-in scaled normal init for weights, zeros for biases.
// Deterministic per seed.
Model build_model(const ModelSpec& spec, uint64_t seed);

struct BatchEval {
    std::vector<double> losses;   // per-sample softmax cross-entropy
    std::vector<int> predictions; // argmax logits (lowest index on ties)
};

// Forward pass only.
BatchEval per_sample_losses(const Model& model, const LabeledDataset& data,
                            std::span<const size_t> indices);

// Forward + backward. grad is resized/zeroed and receives
// d/dtheta sum_i coeffs[i] * loss_i.
BatchEval forward_backward(const Model& model, const LabeledDataset& data,
                           std::span<const size_t> indices,
                           std::span<const double> coeffs, std::vector<double>& grad);

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int batch_size = 512;
    int max_epochs = 100;
    bool early_stop = true;
    Monitor monitor = Monitor::val_acc;
    int patience = 5;
    double min_delta = 0.001;
    double plateau_factor = 0.1;
    int plateau_patience = 10;
    double plateau_rel_tol = 1e-4;
    std::vector<double> per_sample_weights;  // optional, indexed by sample
    uint64_t seed = 0;
};

struct TrainResult {
    Model model;
    int epochs_run = 0;
    int best_epoch = 0;
    std::vector<double> train_loss;  // plain per-sample mean, pre-update losses
    std::vector<double> train_acc;   // pre-update predictions over the epoch
    std::vector<double> val_acc;     // empty when no validation set given
    double final_lr = 0.0;
};

// Called once per sample per epoch with the pre-update loss of the batch
// containing it.
using LossRecorderFn = std::function<void(int epoch, size_t index, double loss)>;

// Fills d(objective)/d(loss_i) for one batch; overrides the default uniform
// (or per_sample_weights) coefficients. Used by G-DRO style objectives.
using BatchCoeffFn = std::function<void(std::span<const size_t> indices,
                                        std::span<const double> losses,
                                        std::span<double> coeffs)>;

// Mini-batch gradient descent with seeded per-epoch shuffling. Gradients
// include weight_decay * theta. Early stopping halts when the monitored
// accuracy has not improved by min_delta for patience+1 epochs past the best
// epoch; the best-epoch parameters are restored on return.
TrainResult train(const Model& init, const LabeledDataset& train_ds,
                  const LabeledDataset* val_ds, const TrainConfig& cfg,
                  const LossRecorderFn& recorder = {},
                  const BatchCoeffFn& batch_coeffs = {});

// TABM checkpoint: magic "TABM", u32 version=1, spec descriptor, u64 init
// seed, u64 count, parameters as little-endian f32.
void write_tabm(const Model& model, const std::string& path);
Model read_tabm(const std::string& path);

}  // namespace tab
