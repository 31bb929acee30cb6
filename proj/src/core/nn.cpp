#include "core/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "core/rng.hpp"

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// loss = logsumexp(logits) - logits[label], with max subtraction.
// When dlogits is non-null it receives coeff * (softmax - onehot).
double softmax_ce(std::span<const double> logits, int label, double coeff,
                  double* dlogits, int* pred) {
    const int n = static_cast<int>(logits.size());
    double mx = logits[0];
    int arg = 0;
    for (int i = 1; i < n; ++i) {
        if (logits[i] > mx) {
            mx = logits[i];
            arg = i;
        }
    }
    if (!std::isfinite(mx)) fail("non-finite activations");
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
    const double lse = mx + std::log(sum);
    if (pred) *pred = arg;
    if (dlogits) {
        for (int i = 0; i < n; ++i) {
            const double p = std::exp(logits[i] - mx) / sum;
            dlogits[i] = coeff * (p - (i == label ? 1.0 : 0.0));
        }
    }
    return lse - logits[label];
}

// ---------------------------------------------------------------------------
// MLP kernels (batched)
// ---------------------------------------------------------------------------
struct MlpDims {
    std::vector<int> dims;             // [input, hidden..., classes]
    std::vector<size_t> w_off, b_off;  // per layer
};

MlpDims mlp_dims(const ModelSpec& spec) {
    MlpDims d;
    d.dims.push_back(static_cast<int>(spec.input_values()));
    for (int h : spec.hidden) d.dims.push_back(h);
    d.dims.push_back(spec.num_classes);
    size_t off = 0;
    for (size_t k = 0; k + 1 < d.dims.size(); ++k) {
        d.w_off.push_back(off);
        off += static_cast<size_t>(d.dims[k + 1]) * d.dims[k];
        d.b_off.push_back(off);
        off += d.dims[k + 1];
    }
    return d;
}

// acts[k]: B x dims[k]; acts.back() holds raw logits.
void mlp_forward(const MlpDims& d, const double* params, const double* input, size_t batch,
                 std::vector<std::vector<double>>& acts) {
    const size_t layers = d.dims.size() - 1;
    acts.resize(layers + 1);
    acts[0].assign(input, input + batch * d.dims[0]);
    for (size_t k = 0; k < layers; ++k) {
        const int din = d.dims[k];
        const int dout = d.dims[k + 1];
        const double* w = params + d.w_off[k];
        const double* b = params + d.b_off[k];
        acts[k + 1].assign(batch * dout, 0.0);
        const bool is_last = (k + 1 == layers);
        for (size_t s = 0; s < batch; ++s) {
            const double* x = acts[k].data() + s * din;
            double* y = acts[k + 1].data() + s * dout;
            for (int o = 0; o < dout; ++o) {
                const double* wr = w + static_cast<size_t>(o) * din;
                double acc = b[o];
                for (int i = 0; i < din; ++i) acc += wr[i] * x[i];
                y[o] = is_last ? acc : std::max(acc, 0.0);
            }
        }
    }
}

void mlp_backward(const MlpDims& d, const double* params, size_t batch,
                  const std::vector<std::vector<double>>& acts,
                  std::vector<double>& delta,  // B x dims.back(), consumed
                  double* grad) {
    const size_t layers = d.dims.size() - 1;
    std::vector<double> delta_prev;
    for (size_t k = layers; k-- > 0;) {
        const int din = d.dims[k];
        const int dout = d.dims[k + 1];
        const double* w = params + d.w_off[k];
        double* gw = grad + d.w_off[k];
        double* gb = grad + d.b_off[k];
        for (size_t s = 0; s < batch; ++s) {
            const double* x = acts[k].data() + s * din;
            const double* dl = delta.data() + s * dout;
            for (int o = 0; o < dout; ++o) {
                const double dv = dl[o];
                if (dv == 0.0) continue;
                double* gwr = gw + static_cast<size_t>(o) * din;
                for (int i = 0; i < din; ++i) gwr[i] += dv * x[i];
                gb[o] += dv;
            }
        }
        if (k == 0) break;
        delta_prev.assign(batch * din, 0.0);
        for (size_t s = 0; s < batch; ++s) {
            const double* dl = delta.data() + s * dout;
            const double* a = acts[k].data() + s * din;
            double* dp = delta_prev.data() + s * din;
            for (int o = 0; o < dout; ++o) {
                const double dv = dl[o];
                if (dv == 0.0) continue;
                const double* wr = w + static_cast<size_t>(o) * din;
                for (int i = 0; i < din; ++i) dp[i] += dv * wr[i];
            }
            for (int i = 0; i < din; ++i) {
                if (a[i] <= 0.0) dp[i] = 0.0;  // ReLU mask
            }
        }
        delta.swap(delta_prev);
    }
}

// ---------------------------------------------------------------------------
// cnn6 kernels (per sample)
// ---------------------------------------------------------------------------
struct CnnDims {
    int h = 0, w = 0;
    std::vector<int> ch;               // [in, 16, 16, 32, 32, 64, 64]
    std::vector<size_t> w_off, b_off;  // six convs then head at index 6
    size_t flat = 0;                   // 64 * h * w
};

CnnDims cnn_dims(const ModelSpec& spec) {
    CnnDims d;
    d.h = spec.in_height;
    d.w = spec.in_width;
    d.ch.push_back(spec.in_channels);
    for (int c : ModelSpec::kConvChannels) d.ch.push_back(c);
    size_t off = 0;
    for (int k = 0; k < 6; ++k) {
        d.w_off.push_back(off);
        off += static_cast<size_t>(d.ch[k + 1]) * d.ch[k] * 9;
        d.b_off.push_back(off);
        off += d.ch[k + 1];
    }
    d.flat = static_cast<size_t>(d.ch.back()) * d.h * d.w;
    d.w_off.push_back(off);
    off += static_cast<size_t>(spec.num_classes) * d.flat;
    d.b_off.push_back(off);
    return d;
}

void conv3x3_forward(const double* in, int in_ch, int h, int w, const double* weights,
                     const double* bias, int out_ch, bool relu, double* out) {
    const int hw = h * w;
    for (int oc = 0; oc < out_ch; ++oc) {
        double* op = out + static_cast<size_t>(oc) * hw;
        for (int i = 0; i < hw; ++i) op[i] = bias[oc];
        for (int ic = 0; ic < in_ch; ++ic) {
            const double* ip = in + static_cast<size_t>(ic) * hw;
            const double* wp = weights + (static_cast<size_t>(oc) * in_ch + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const double wv = wp[ky * 3 + kx];
                    if (wv == 0.0) continue;
                    const int y0 = std::max(0, 1 - ky);
                    const int y1 = std::min(h, h + 1 - ky);
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    for (int y = y0; y < y1; ++y) {
                        const double* irow = ip + (y + ky - 1) * w + (kx - 1);
                        double* orow = op + y * w;
                        for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                    }
                }
            }
        }
        if (relu) {
            for (int i = 0; i < hw; ++i) op[i] = std::max(op[i], 0.0);
        }
    }
}

// dz: gradient w.r.t. the pre-ReLU output of this conv. Accumulates weight and
// bias gradients and (when din is non-null) the gradient w.r.t. the input.
void conv3x3_backward(const double* in, int in_ch, int h, int w, const double* weights,
                      int out_ch, const double* dz, double* gw, double* gb, double* din) {
    const int hw = h * w;
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* dzp = dz + static_cast<size_t>(oc) * hw;
        double acc_b = 0.0;
        for (int i = 0; i < hw; ++i) acc_b += dzp[i];
        gb[oc] += acc_b;
        for (int ic = 0; ic < in_ch; ++ic) {
            const double* ip = in + static_cast<size_t>(ic) * hw;
            double* gwp = gw + (static_cast<size_t>(oc) * in_ch + ic) * 9;
            const double* wp = weights + (static_cast<size_t>(oc) * in_ch + ic) * 9;
            double* dip = din ? din + static_cast<size_t>(ic) * hw : nullptr;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int y0 = std::max(0, 1 - ky);
                    const int y1 = std::min(h, h + 1 - ky);
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    double acc_w = 0.0;
                    const double wv = wp[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        const double* irow = ip + (y + ky - 1) * w + (kx - 1);
                        const double* drow = dzp + y * w;
                        if (dip) {
                            double* dirow = dip + (y + ky - 1) * w + (kx - 1);
                            for (int x = x0; x < x1; ++x) {
                                acc_w += drow[x] * irow[x];
                                dirow[x] += drow[x] * wv;
                            }
                        } else {
                            for (int x = x0; x < x1; ++x) acc_w += drow[x] * irow[x];
                        }
                    }
                    gwp[ky * 3 + kx] += acc_w;
                }
            }
        }
    }
}

struct CnnWorkspace {
    std::vector<std::vector<double>> acts;  // 7 tensors, post-ReLU
    std::vector<double> logits;
    std::vector<std::vector<double>> dact;
};

void cnn_forward_sample(const CnnDims& d, const ModelSpec& spec, const double* params,
                        const float* image, CnnWorkspace& ws) {
    const int hw = d.h * d.w;
    ws.acts.resize(7);
    ws.acts[0].resize(static_cast<size_t>(d.ch[0]) * hw);
    for (size_t i = 0; i < ws.acts[0].size(); ++i) ws.acts[0][i] = image[i];
    for (int k = 0; k < 6; ++k) {
        ws.acts[k + 1].resize(static_cast<size_t>(d.ch[k + 1]) * hw);
        conv3x3_forward(ws.acts[k].data(), d.ch[k], d.h, d.w, params + d.w_off[k],
                        params + d.b_off[k], d.ch[k + 1], /*relu=*/true,
                        ws.acts[k + 1].data());
    }
    const double* hwt = params + d.w_off[6];
    const double* hb = params + d.b_off[6];
    ws.logits.resize(spec.num_classes);
    for (int o = 0; o < spec.num_classes; ++o) {
        const double* wr = hwt + static_cast<size_t>(o) * d.flat;
        double acc = hb[o];
        for (size_t j = 0; j < d.flat; ++j) acc += wr[j] * ws.acts[6][j];
        ws.logits[o] = acc;
    }
}

void cnn_backward_sample(const CnnDims& d, const ModelSpec& spec, const double* params,
                         const double* dlogits, CnnWorkspace& ws, double* grad) {
    const int hw = d.h * d.w;
    ws.dact.resize(7);
    // head
    double* ghw = grad + d.w_off[6];
    double* ghb = grad + d.b_off[6];
    ws.dact[6].assign(d.flat, 0.0);
    const double* hwt = params + d.w_off[6];
    for (int o = 0; o < spec.num_classes; ++o) {
        const double dv = dlogits[o];
        ghb[o] += dv;
        double* gr = ghw + static_cast<size_t>(o) * d.flat;
        const double* wr = hwt + static_cast<size_t>(o) * d.flat;
        for (size_t j = 0; j < d.flat; ++j) {
            gr[j] += dv * ws.acts[6][j];
            ws.dact[6][j] += dv * wr[j];
        }
    }
    for (int k = 5; k >= 0; --k) {
        // ReLU mask turns dact into the pre-activation gradient
        auto& dz = ws.dact[k + 1];
        for (size_t i = 0; i < dz.size(); ++i) {
            if (ws.acts[k + 1][i] <= 0.0) dz[i] = 0.0;
        }
        double* din = nullptr;
        if (k > 0) {
            ws.dact[k].assign(static_cast<size_t>(d.ch[k]) * hw, 0.0);
            din = ws.dact[k].data();
        }
        conv3x3_backward(ws.acts[k].data(), d.ch[k], d.h, d.w, params + d.w_off[k],
                         d.ch[k + 1], dz.data(), grad + d.w_off[k], grad + d.b_off[k],
                         din);
    }
}

void check_indices(const LabeledDataset& data, std::span<const size_t> indices) {
    for (size_t i : indices) {
        if (i >= data.size()) fail("sample index out of range");
    }
}

BatchEval run_batch(const Model& model, const LabeledDataset& data,
                    std::span<const size_t> indices, std::span<const double> coeffs,
                    std::vector<double>* grad) {
    const auto& spec = model.spec;
    if (data.channels != spec.in_channels || data.height != spec.in_height ||
        data.width != spec.in_width) {
        fail("batch shape does not match model spec");
    }
    check_indices(data, indices);
    const size_t batch = indices.size();
    BatchEval out;
    out.losses.resize(batch);
    out.predictions.resize(batch);
    if (grad) grad->assign(spec.param_count(), 0.0);

    if (spec.kind == ModelKind::mlp) {
        const MlpDims d = mlp_dims(spec);
        const size_t n0 = spec.input_values();
        std::vector<double> input(batch * n0);
        for (size_t s = 0; s < batch; ++s) {
            const float* src = data.sample(indices[s]);
            double* dst = input.data() + s * n0;
            for (size_t j = 0; j < n0; ++j) dst[j] = src[j];
        }
        std::vector<std::vector<double>> acts;
        mlp_forward(d, model.params.data(), input.data(), batch, acts);
        const int L = spec.num_classes;
        std::vector<double> delta;
        if (grad) delta.assign(batch * L, 0.0);
        for (size_t s = 0; s < batch; ++s) {
            std::span<const double> logits(acts.back().data() + s * L, L);
            for (double v : logits) {
                if (!std::isfinite(v)) {
                    fail("non-finite activations at sample " +
                         std::to_string(indices[s]));
                }
            }
            out.losses[s] = softmax_ce(logits, data.labels[indices[s]],
                                       grad ? coeffs[s] : 0.0,
                                       grad ? delta.data() + s * L : nullptr,
                                       &out.predictions[s]);
        }
        if (grad) mlp_backward(d, model.params.data(), batch, acts, delta, grad->data());
    } else {
        const CnnDims d = cnn_dims(spec);
        CnnWorkspace ws;
        std::vector<double> dlogits(spec.num_classes);
        for (size_t s = 0; s < batch; ++s) {
            cnn_forward_sample(d, spec, model.params.data(), data.sample(indices[s]), ws);
            for (double v : ws.logits) {
                if (!std::isfinite(v)) {
                    fail("non-finite activations at sample " +
                         std::to_string(indices[s]));
                }
            }
            out.losses[s] = softmax_ce(ws.logits, data.labels[indices[s]],
                                       grad ? coeffs[s] : 0.0,
                                       grad ? dlogits.data() : nullptr,
                                       &out.predictions[s]);
            if (grad) {
                cnn_backward_sample(d, spec, model.params.data(), dlogits.data(), ws,
                                    grad->data());
            }
        }
    }
    return out;
}

double min_group_accuracy(const std::vector<int>& preds, const LabeledDataset& ds) {
    std::vector<size_t> correct(ds.num_groups, 0), count(ds.num_groups, 0);
    for (size_t i = 0; i < ds.size(); ++i) {
        ++count[ds.groups[i]];
        if (preds[i] == ds.labels[i]) ++correct[ds.groups[i]];
    }
    double mn = std::numeric_limits<double>::infinity();
    for (int g = 0; g < ds.num_groups; ++g) {
        if (count[g] > 0) mn = std::min(mn, double(correct[g]) / double(count[g]));
    }
    return mn;
}

}  // namespace

void ModelSpec::validate() const {
    if (in_channels < 1 || in_height < 1 || in_width < 1) {
        fail("unsupported input shape");
    }
    if (num_classes < 2) fail("need at least two classes");
    if (kind == ModelKind::mlp) {
        for (int h : hidden) {
            if (h < 1) fail("hidden width must be positive");
        }
    }
}

std::vector<ModelSpec::Tensor> ModelSpec::layout() const {
    validate();
    std::vector<Tensor> out;
    size_t off = 0;
    auto add = [&](std::string name, size_t count, size_t fan_in) {
        out.push_back({std::move(name), off, count, fan_in});
        off += count;
    };
    if (kind == ModelKind::mlp) {
        int prev = static_cast<int>(input_values());
        std::vector<int> dims = hidden;
        dims.push_back(num_classes);
        for (size_t k = 0; k < dims.size(); ++k) {
            add("fc" + std::to_string(k) + ".w", static_cast<size_t>(dims[k]) * prev,
                static_cast<size_t>(prev));
            add("fc" + std::to_string(k) + ".b", dims[k], 0);
            prev = dims[k];
        }
    } else {
        int prev = in_channels;
        for (int k = 0; k < 6; ++k) {
            const int oc = kConvChannels[k];
            add("conv" + std::to_string(k) + ".w", static_cast<size_t>(oc) * prev * 9,
                static_cast<size_t>(prev) * 9);
            add("conv" + std::to_string(k) + ".b", oc, 0);
            prev = oc;
        }
        const size_t flat = static_cast<size_t>(prev) * in_height * in_width;
        add("head.w", static_cast<size_t>(num_classes) * flat, flat);
        add("head.b", num_classes, 0);
    }
    return out;
}

size_t ModelSpec::param_count() const {
    size_t total = 0;
    for (const auto& t : layout()) total += t.count;
    return total;
}

Model build_model(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    m.init_seed = seed;
    m.params.assign(spec.param_count(), 0.0);
    Rng rng(derive_seed(seed, 0x1817));
    for (const auto& t : spec.layout()) {
        if (t.fan_in == 0) continue;  // biases stay zero
        const double std_dev = std::sqrt(2.0 / static_cast<double>(t.fan_in));
        for (size_t i = 0; i < t.count; ++i) {
            m.params[t.offset + i] = std_dev * rng.normal();
        }
    }
    return m;
}

BatchEval per_sample_losses(const Model& model, const LabeledDataset& data,
                            std::span<const size_t> indices) {
    return run_batch(model, data, indices, {}, nullptr);
}

BatchEval forward_backward(const Model& model, const LabeledDataset& data,
                           std::span<const size_t> indices,
                           std::span<const double> coeffs, std::vector<double>& grad) {
    if (coeffs.size() != indices.size()) fail("coefficient count mismatch");
    return run_batch(model, data, indices, coeffs, &grad);
}

TrainResult train(const Model& init, const LabeledDataset& train_ds,
                  const LabeledDataset* val_ds, const TrainConfig& cfg,
                  const LossRecorderFn& recorder, const BatchCoeffFn& batch_coeffs) {
    if (train_ds.size() == 0) fail("empty training set");
    if (cfg.lr <= 0.0) fail("learning rate must be positive");
    if (cfg.weight_decay < 0.0) fail("weight decay must be nonnegative");
    if (cfg.batch_size < 1) fail("batch size must be at least 1");
    if (cfg.max_epochs < 1) fail("max_epochs must be at least 1");
    if (cfg.patience < 1) fail("patience must be at least 1");
    if (cfg.early_stop && cfg.monitor != Monitor::train_acc && !val_ds) {
        fail("validation set required for validation-monitored early stopping");
    }
    if (cfg.monitor == Monitor::val_wga && val_ds && !val_ds->has_groups()) {
        fail("validation set has no group ids for WGA monitoring");
    }
    if (!cfg.per_sample_weights.empty() &&
        cfg.per_sample_weights.size() != train_ds.size()) {
        fail("per_sample_weights size mismatch");
    }

    const size_t n = train_ds.size();
    const size_t pcount = init.spec.param_count();
    TrainResult res;
    res.model = init;

    std::vector<double> grad;
    std::vector<double> adam_m, adam_v, sgd_vel;
    if (cfg.optimizer == OptimizerKind::adam) {
        adam_m.assign(pcount, 0.0);
        adam_v.assign(pcount, 0.0);
    } else {
        sgd_vel.assign(pcount, 0.0);
    }
    long long adam_t = 0;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x58));

    double lr = cfg.lr;
    double best_metric = -std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    std::vector<double> best_params;
    double plateau_best = std::numeric_limits<double>::infinity();
    int plateau_bad = 0;

    std::vector<double> coeffs;
    std::vector<size_t> val_order;
    if (val_ds) {
        val_order.resize(val_ds->size());
        std::iota(val_order.begin(), val_order.end(), size_t{0});
    }

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t start = 0; start < n; start += cfg.batch_size) {
            const size_t bn = std::min<size_t>(cfg.batch_size, n - start);
            std::span<const size_t> idx(order.data() + start, bn);
            coeffs.assign(bn, 1.0 / static_cast<double>(bn));
            if (!cfg.per_sample_weights.empty()) {
                double wsum = 0.0;
                for (size_t s = 0; s < bn; ++s) wsum += cfg.per_sample_weights[idx[s]];
                if (wsum <= 0.0) fail("per_sample_weights sum to zero in a batch");
                for (size_t s = 0; s < bn; ++s) {
                    coeffs[s] = cfg.per_sample_weights[idx[s]] / wsum;
                }
            }
            BatchEval be;
            try {
                if (batch_coeffs) {
                    // pre-update losses drive the dynamic objective
                    be = per_sample_losses(res.model, train_ds, idx);
                    batch_coeffs(idx, be.losses, coeffs);
                    BatchEval withgrad =
                        forward_backward(res.model, train_ds, idx, coeffs, grad);
                    be.predictions = std::move(withgrad.predictions);
                } else {
                    be = forward_backward(res.model, train_ds, idx, coeffs, grad);
                }
            } catch (const std::exception& e) {
                fail("epoch " + std::to_string(epoch) + ", batch " +
                     std::to_string(start / cfg.batch_size) + ": " + e.what());
            }
            for (size_t s = 0; s < bn; ++s) {
                const double l = be.losses[s];
                if (!std::isfinite(l)) {
                    fail("non-finite loss at epoch " + std::to_string(epoch));
                }
                loss_sum += l;
                if (be.predictions[s] == train_ds.labels[idx[s]]) ++correct;
                if (recorder) recorder(epoch, idx[s], l);
            }
            if (cfg.weight_decay > 0.0) {
                for (size_t j = 0; j < pcount; ++j) {
                    grad[j] += cfg.weight_decay * res.model.params[j];
                }
            }
            if (cfg.optimizer == OptimizerKind::adam) {
                ++adam_t;
                const double bc1 = 1.0 - std::pow(cfg.beta1, adam_t);
                const double bc2 = 1.0 - std::pow(cfg.beta2, adam_t);
                for (size_t j = 0; j < pcount; ++j) {
                    adam_m[j] = cfg.beta1 * adam_m[j] + (1.0 - cfg.beta1) * grad[j];
                    adam_v[j] = cfg.beta2 * adam_v[j] + (1.0 - cfg.beta2) * grad[j] * grad[j];
                    res.model.params[j] -=
                        lr * (adam_m[j] / bc1) / (std::sqrt(adam_v[j] / bc2) + cfg.adam_eps);
                }
            } else {
                for (size_t j = 0; j < pcount; ++j) {
                    sgd_vel[j] = cfg.momentum * sgd_vel[j] + grad[j];
                    res.model.params[j] -= lr * sgd_vel[j];
                }
            }
        }

        const double train_loss = loss_sum / static_cast<double>(n);
        const double train_acc = static_cast<double>(correct) / static_cast<double>(n);
        res.train_loss.push_back(train_loss);
        res.train_acc.push_back(train_acc);

        double val_acc = 0.0;
        double val_wga = 0.0;
        if (val_ds) {
            std::vector<int> preds(val_ds->size());
            size_t vcorrect = 0;
            for (size_t start = 0; start < val_ds->size(); start += cfg.batch_size) {
                const size_t bn = std::min<size_t>(cfg.batch_size, val_ds->size() - start);
                std::span<const size_t> idx(val_order.data() + start, bn);
                BatchEval be = per_sample_losses(res.model, *val_ds, idx);
                for (size_t s = 0; s < bn; ++s) {
                    preds[idx[s]] = be.predictions[s];
                    if (be.predictions[s] == val_ds->labels[idx[s]]) ++vcorrect;
                }
            }
            val_acc = static_cast<double>(vcorrect) / static_cast<double>(val_ds->size());
            res.val_acc.push_back(val_acc);
            if (cfg.monitor == Monitor::val_wga) {
                val_wga = min_group_accuracy(preds, *val_ds);
            }
        }

        res.epochs_run = epoch;

        // LR on plateau, driven by the train loss
        if (train_loss < plateau_best * (1.0 - cfg.plateau_rel_tol)) {
            plateau_best = train_loss;
            plateau_bad = 0;
        } else if (++plateau_bad > cfg.plateau_patience) {
            lr *= cfg.plateau_factor;
            plateau_bad = 0;
        }

        if (cfg.early_stop) {
            const double monitored = cfg.monitor == Monitor::train_acc ? train_acc
                                     : cfg.monitor == Monitor::val_acc ? val_acc
                                                                       : val_wga;
            if (monitored > best_metric + cfg.min_delta) {
                best_metric = monitored;
                best_epoch = epoch;
                best_params = res.model.params;
            }
            if (epoch - best_epoch >= cfg.patience + 1) break;
        }
    }

    if (cfg.early_stop && !best_params.empty()) {
        res.model.params = std::move(best_params);
        res.best_epoch = best_epoch;
    } else {
        res.best_epoch = res.epochs_run;
    }
    res.final_lr = lr;
    return res;
}

void write_tabm(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open for write: " + path);
    auto w32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto w64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    out.write("TABM", 4);
    w32(1);
    w32(model.spec.kind == ModelKind::mlp ? 0u : 1u);
    w32(static_cast<uint32_t>(model.spec.in_channels));
    w32(static_cast<uint32_t>(model.spec.in_height));
    w32(static_cast<uint32_t>(model.spec.in_width));
    w32(static_cast<uint32_t>(model.spec.num_classes));
    w32(static_cast<uint32_t>(model.spec.hidden.size()));
    for (int h : model.spec.hidden) w32(static_cast<uint32_t>(h));
    w64(model.init_seed);
    w64(model.params.size());
    for (double p : model.params) {
        const float f = static_cast<float>(p);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) fail("write failed: " + path);
}

Model read_tabm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "TABM", 4) != 0) {
        fail("bad magic in TABM file: " + path);
    }
    auto r32 = [&](const std::string& what) {
        uint32_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), 4)) fail("truncated TABM: " + what);
        return v;
    };
    auto r64 = [&](const std::string& what) {
        uint64_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), 8)) fail("truncated TABM: " + what);
        return v;
    };
    if (r32("version") != 1) fail("unsupported TABM version");
    Model m;
    m.spec.kind = r32("kind") == 0 ? ModelKind::mlp : ModelKind::cnn6;
    m.spec.in_channels = static_cast<int>(r32("channels"));
    m.spec.in_height = static_cast<int>(r32("height"));
    m.spec.in_width = static_cast<int>(r32("width"));
    m.spec.num_classes = static_cast<int>(r32("classes"));
    const uint32_t nh = r32("hidden count");
    m.spec.hidden.resize(nh);
    for (auto& h : m.spec.hidden) h = static_cast<int>(r32("hidden"));
    m.init_seed = r64("init seed");
    const uint64_t count = r64("param count");
    if (count != m.spec.param_count()) fail("TABM parameter count mismatch");
    m.params.resize(count);
    for (auto& p : m.params) {
        float f = 0.0f;
        if (!in.read(reinterpret_cast<char*>(&f), 4)) {
            fail("payload shorter than header claims: params");
        }
        p = f;
    }
    return m;
}

}  // namespace tab
