#include "core/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "core/rng.hpp"

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// Final-model seed streams shared by ERM, JTT's second pass, and TAB's
// robust run, so the two-pass methods reduce to ERM exactly when their
// reweighting is a no-op.
constexpr uint64_t kFinalModelStream = 1;
constexpr uint64_t kFinalTrainStream = 2;
constexpr uint64_t kJttIdModelStream = 11;
constexpr uint64_t kJttIdTrainStream = 12;

}  // namespace

ErmResult run_erm(const ModelSpec& spec, const LabeledDataset& train_ds,
                  const LabeledDataset& val_ds, const LabeledDataset& test_ds,
                  const TrainConfig& config, uint64_t seed) {
    TrainConfig cfg = config;
    cfg.monitor = Monitor::val_acc;
    cfg.early_stop = true;
    cfg.seed = derive_seed(seed, kFinalTrainStream);
    const Model init = build_model(spec, derive_seed(seed, kFinalModelStream));
    ErmResult out;
    out.train_result = tab::train(init, train_ds, &val_ds, cfg);
    out.eval = evaluate(out.train_result.model, test_ds, config.batch_size);
    return out;
}

JttResult run_jtt(const ModelSpec& spec, const LabeledDataset& train_ds,
                  const LabeledDataset& val_ds, const LabeledDataset& test_ds,
                  const TrainConfig& config, const JttConfig& jtt, uint64_t seed) {
    if (jtt.t_id < 1) fail("JTT identifier epochs must be at least 1");
    if (jtt.t_id > config.max_epochs) fail("JTT identifier epochs exceed max_epochs");
    if (!jtt.ratio && jtt.lambda_up < 1) fail("lambda_up must be at least 1");

    JttResult out;
    TrainConfig id_cfg = config;
    id_cfg.early_stop = false;
    id_cfg.max_epochs = jtt.t_id;
    id_cfg.seed = derive_seed(seed, kJttIdTrainStream);
    const Model id_init = build_model(spec, derive_seed(seed, kJttIdModelStream));
    out.identifier = tab::train(id_init, train_ds, nullptr, id_cfg);

    const EvalRecord on_train = evaluate(out.identifier.model, train_ds, config.batch_size);
    std::vector<size_t> error_set;
    for (size_t i = 0; i < train_ds.size(); ++i) {
        if (on_train.predictions[i] != train_ds.labels[i]) error_set.push_back(i);
    }
    out.error_set_size = error_set.size();

    LabeledDataset upweighted = train_ds;
    if (error_set.empty()) {
        out.empty_error_set = true;
        out.lambda_up_used = 1;
    } else {
        int lambda = jtt.lambda_up;
        if (jtt.ratio) {
            const double correct =
                static_cast<double>(train_ds.size() - error_set.size());
            lambda = std::max(
                1, static_cast<int>(std::llround(correct / error_set.size())));
        }
        out.lambda_up_used = lambda;
        for (size_t i : error_set) {
            for (int d = 1; d < lambda; ++d) {  // already included once
                upweighted.features.push_back(train_ds.features[i]);
                upweighted.labels.push_back(train_ds.labels[i]);
                if (train_ds.has_groups()) upweighted.groups.push_back(train_ds.groups[i]);
            }
        }
    }

    TrainConfig cfg = config;
    cfg.monitor = Monitor::val_acc;
    cfg.early_stop = true;
    cfg.seed = derive_seed(seed, kFinalTrainStream);
    const Model init = build_model(spec, derive_seed(seed, kFinalModelStream));
    out.train_result = tab::train(init, upweighted, &val_ds, cfg);
    out.eval = evaluate(out.train_result.model, test_ds, config.batch_size);
    return out;
}

void GdroState::update(const std::vector<double>& group_mean_losses) {
    if (group_mean_losses.size() != q.size()) fail("G-DRO group count mismatch");
    for (size_t g = 0; g < q.size(); ++g) {
        if (group_mean_losses[g] >= 0.0) {
            q[g] *= std::exp(gamma * group_mean_losses[g]);
        }
    }
    double total = std::accumulate(q.begin(), q.end(), 0.0);
    if (total <= 0.0 || !std::isfinite(total)) fail("G-DRO weights degenerated");
    for (auto& v : q) v /= total;
}

GdroResult run_gdro(const ModelSpec& spec, const LabeledDataset& train_ds,
                    const LabeledDataset& val_ds, const LabeledDataset& test_ds,
                    const TrainConfig& config, double gamma, uint64_t seed) {
    if (!train_ds.has_groups()) fail("G-DRO requires training group labels");
    if (!val_ds.has_groups()) fail("G-DRO requires validation group labels");

    const int k = train_ds.num_groups;
    GdroState state;
    state.gamma = gamma;
    state.q.assign(k, 0.0);
    std::vector<bool> present(k, false);
    size_t present_count = 0;
    for (int g : train_ds.groups) {
        if (!present[g]) {
            present[g] = true;
            ++present_count;
        }
    }
    for (int g = 0; g < k; ++g) {
        if (present[g]) state.q[g] = 1.0 / static_cast<double>(present_count);
    }

    GdroResult out;
    std::vector<double> group_losses(k);
    std::vector<size_t> group_counts(k);
    auto coeff_fn = [&](std::span<const size_t> idx, std::span<const double> losses,
                        std::span<double> coeffs) {
        std::fill(group_losses.begin(), group_losses.end(), -1.0);
        std::fill(group_counts.begin(), group_counts.end(), size_t{0});
        for (size_t s = 0; s < idx.size(); ++s) {
            const int g = train_ds.groups[idx[s]];
            if (group_losses[g] < 0.0) group_losses[g] = 0.0;
            group_losses[g] += losses[s];
            ++group_counts[g];
        }
        for (int g = 0; g < k; ++g) {
            if (group_counts[g] > 0) group_losses[g] /= group_counts[g];
        }
        state.update(group_losses);
        const double total = std::accumulate(state.q.begin(), state.q.end(), 0.0);
        out.max_simplex_violation =
            std::max(out.max_simplex_violation, std::abs(total - 1.0));
        // batch objective: sum_g q_g * mean loss of g
        for (size_t s = 0; s < idx.size(); ++s) {
            const int g = train_ds.groups[idx[s]];
            coeffs[s] = state.q[g] / static_cast<double>(group_counts[g]);
        }
    };

    TrainConfig cfg = config;
    cfg.monitor = Monitor::val_wga;
    cfg.early_stop = true;
    cfg.seed = derive_seed(seed, kFinalTrainStream);
    const Model init = build_model(spec, derive_seed(seed, kFinalModelStream));
    out.train_result = tab::train(init, train_ds, &val_ds, cfg, {}, coeff_fn);
    out.eval = evaluate(out.train_result.model, test_ds, config.batch_size);
    return out;
}

}  // namespace tab
