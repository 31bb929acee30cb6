#include "core/tab_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "core/rng.hpp"
#include "json.hpp"

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// Seed stream ids. The final model deliberately shares {1, 2} with ERM runs.
constexpr uint64_t kFinalModelStream = 1;
constexpr uint64_t kFinalTrainStream = 2;
constexpr uint64_t kIdentifierModelStream = 21;
constexpr uint64_t kIdentifierTrainStream = 22;
constexpr uint64_t kClusterStream = 23;
constexpr uint64_t kManifestStream = 24;

}  // namespace

const PseudoGroupPartition::ClassSplit* PseudoGroupPartition::find(int label) const {
    for (const auto& c : classes) {
        if (c.label == label) return &c;
    }
    return nullptr;
}

size_t AugmentationManifest::total_copies() const {
    size_t total = 0;
    for (const auto& e : entries) total += e.copies;
    return total;
}

PseudoGroupPartition partition_classes(const LossHistoryMatrix& h, uint64_t seed) {
    if (h.n == 0 || h.t == 0) fail("empty loss history");
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < h.n; ++i) by_class[h.labels[i]].push_back(i);

    PseudoGroupPartition out;
    for (const auto& [label, rows] : by_class) {
        PseudoGroupPartition::ClassSplit split;
        split.label = label;
        if (rows.size() == 1) {
            split.majority = rows;
            out.classes.push_back(std::move(split));
            continue;
        }
        std::vector<double> points(rows.size() * h.t);
        for (size_t r = 0; r < rows.size(); ++r) {
            for (size_t e = 0; e < h.t; ++e) {
                points[r * h.t + e] = h.at(rows[r], e);
            }
        }
        const Clustering c = kmeans2(points, rows.size(), h.t,
                                     derive_seed(seed, 0xc000 + (uint64_t)label));
        std::array<std::vector<size_t>, 2> members;
        std::array<double, 2> final_loss_sum = {0.0, 0.0};
        for (size_t r = 0; r < rows.size(); ++r) {
            members[c.assignment[r]].push_back(rows[r]);
            final_loss_sum[c.assignment[r]] += points[r * h.t + (h.t - 1)];
        }
        int minority;
        if (members[0].size() != members[1].size()) {
            minority = members[0].size() < members[1].size() ? 0 : 1;
        } else {
            // tie: the cluster with the higher mean final-epoch loss is the
            // minority (bias-conflicting samples carry higher losses)
            const double m0 = final_loss_sum[0] / std::max<size_t>(members[0].size(), 1);
            const double m1 = final_loss_sum[1] / std::max<size_t>(members[1].size(), 1);
            minority = m0 > m1 ? 0 : 1;
        }
        split.majority = std::move(members[1 - minority]);
        split.minority = std::move(members[minority]);
        std::sort(split.majority.begin(), split.majority.end());
        std::sort(split.minority.begin(), split.minority.end());
        out.classes.push_back(std::move(split));
    }
    return out;
}

AugmentationManifest build_manifest(const PseudoGroupPartition& partition, uint64_t seed) {
    AugmentationManifest out;
    Rng rng(derive_seed(seed, 0xa9f1));
    for (const auto& split : partition.classes) {
        AugmentationManifest::ClassInfo info;
        info.label = split.label;
        info.minority_size = split.minority.size();
        if (split.majority.size() < split.minority.size()) {
            fail("invalid partition: majority smaller than minority");
        }
        info.z = split.majority.size() - split.minority.size();
        if (info.z > 0 && split.minority.empty()) {
            info.skipped_empty_minority = true;
            out.classes.push_back(info);
            continue;
        }
        std::map<size_t, int> counts;
        for (size_t d = 0; d < info.z; ++d) {
            const size_t pick = split.minority[rng.index(split.minority.size())];
            ++counts[pick];
        }
        for (const auto& [index, copies] : counts) {
            out.entries.push_back({index, copies, rng.next_u64()});
        }
        out.classes.push_back(info);
    }
    std::sort(out.entries.begin(), out.entries.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });
    return out;
}

LabeledDataset apply_manifest(const LabeledDataset& train,
                              const AugmentationManifest& manifest,
                              const EtaFn& transform) {
    LabeledDataset out = train;
    for (const auto& e : manifest.entries) {
        if (e.index >= train.size()) fail("manifest index out of range");
        for (int d = 0; d < e.copies; ++d) {
            if (transform) {
                auto img = transform(train.sample(e.index), train.channels, train.height,
                                     train.width, derive_seed(e.transform_seed, d));
                out.features.push_back(std::make_shared<SampleData>(std::move(img)));
            } else {
                out.features.push_back(train.features[e.index]);  // shared storage
            }
            out.labels.push_back(train.labels[e.index]);
            if (train.has_groups()) out.groups.push_back(train.groups[e.index]);
        }
    }
    out.validate();
    return out;
}

SampleData eta_apply(const float* img, int c, int h, int w, double theta, double dx,
                     double dy, bool blur) {
    const size_t hw = static_cast<size_t>(h) * w;
    SampleData out(static_cast<size_t>(c) * hw, 0.0f);
    const double cy = (h - 1) / 2.0;
    const double cx = (w - 1) / 2.0;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    for (int ch = 0; ch < c; ++ch) {
        const float* in = img + static_cast<size_t>(ch) * hw;
        float* dst = out.data() + static_cast<size_t>(ch) * hw;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                // inverse map: undo translation, then rotate back about center
                const double ux = x - dx - cx;
                const double uy = y - dy - cy;
                const double sx = cos_t * ux + sin_t * uy + cx;
                const double sy = -sin_t * ux + cos_t * uy + cy;
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0;
                const double fy = sy - y0;
                double acc = 0.0;
                for (int oy = 0; oy < 2; ++oy) {
                    for (int ox = 0; ox < 2; ++ox) {
                        const int xi = x0 + ox;
                        const int yi = y0 + oy;
                        if (xi < 0 || xi >= w || yi < 0 || yi >= h) continue;  // zero fill
                        const double wgt = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
                        acc += wgt * in[yi * w + xi];
                    }
                }
                dst[y * w + x] = static_cast<float>(acc);
            }
        }
    }
    if (blur) {
        // 5x5 Gaussian (sigma = 1), normalized; zero padding at borders
        static const double kKernel1d[5] = {0.05448868, 0.24420134, 0.40261996,
                                            0.24420134, 0.05448868};
        SampleData tmp(out.size(), 0.0f);
        for (int ch = 0; ch < c; ++ch) {
            float* plane = out.data() + static_cast<size_t>(ch) * hw;
            float* tp = tmp.data() + static_cast<size_t>(ch) * hw;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int k = -2; k <= 2; ++k) {
                        const int xi = x + k;
                        if (xi < 0 || xi >= w) continue;
                        acc += kKernel1d[k + 2] * plane[y * w + xi];
                    }
                    tp[y * w + x] = static_cast<float>(acc);
                }
            }
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int k = -2; k <= 2; ++k) {
                        const int yi = y + k;
                        if (yi < 0 || yi >= h) continue;
                        acc += kKernel1d[k + 2] * tp[yi * w + x];
                    }
                    plane[y * w + x] = static_cast<float>(acc);
                }
            }
        }
    }
    for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

SampleData eta_transform(const float* img, int c, int h, int w, uint64_t seed) {
    Rng rng(derive_seed(seed, 0xe7a0));
    const double pi = 3.14159265358979323846;
    const double theta = rng.uniform(-pi / 6.0, pi / 6.0);
    const double dx = rng.uniform(0.0, w / 10.0);
    const double dy = rng.uniform(0.0, h / 10.0);
    return eta_apply(img, c, h, w, theta, dx, dy, /*blur=*/true);
}

void write_manifest(const AugmentationManifest& manifest, const std::string& path) {
    nlohmann::json j;
    auto classes = nlohmann::json::array();
    for (const auto& c : manifest.classes) {
        nlohmann::json jc;
        jc["label"] = c.label;
        jc["z"] = c.z;
        jc["minority_size"] = c.minority_size;
        if (c.skipped_empty_minority) jc["skipped_empty_minority"] = true;
        classes.push_back(jc);
    }
    auto entries = nlohmann::json::array();
    for (const auto& e : manifest.entries) {
        entries.push_back({{"index", e.index},
                           {"copies", e.copies},
                           {"transform_seed", e.transform_seed}});
    }
    j["classes"] = classes;
    j["entries"] = entries;
    std::ofstream out(path);
    if (!out) fail("cannot open for write: " + path);
    out << j.dump(2) << "\n";
    if (!out) fail("write failed: " + path);
}

AugmentationManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("corrupt manifest JSON: " + std::string(e.what()));
    }
    AugmentationManifest m;
    for (const auto& jc : j.at("classes")) {
        AugmentationManifest::ClassInfo c;
        c.label = jc.at("label").get<int>();
        c.z = jc.at("z").get<size_t>();
        c.minority_size = jc.at("minority_size").get<size_t>();
        c.skipped_empty_minority = jc.value("skipped_empty_minority", false);
        m.classes.push_back(c);
    }
    for (const auto& je : j.at("entries")) {
        AugmentationManifest::Entry e;
        e.index = je.at("index").get<size_t>();
        e.copies = je.at("copies").get<int>();
        e.transform_seed = je.at("transform_seed").get<uint64_t>();
        if (e.copies < 1) fail("manifest entry with non-positive copies");
        m.entries.push_back(e);
    }
    return m;
}

TabSeeds tab_stage_seeds(uint64_t seed) {
    TabSeeds s;
    s.identifier_model = derive_seed(seed, kIdentifierModelStream);
    s.identifier_train = derive_seed(seed, kIdentifierTrainStream);
    s.cluster = derive_seed(seed, kClusterStream);
    s.manifest = derive_seed(seed, kManifestStream);
    s.robust_model = derive_seed(seed, kFinalModelStream);
    s.robust_train = derive_seed(seed, kFinalTrainStream);
    return s;
}

TabRunResult run_tab(const ModelSpec& spec, const LabeledDataset& train,
                     const LabeledDataset& val, const LabeledDataset* test,
                     const TrainConfig& config, uint64_t seed, bool use_eta) {
    const TabSeeds seeds = tab_stage_seeds(seed);
    TabRunResult out;

    // stage 1: identifier, early-stopped on training accuracy
    TrainConfig id_cfg = config;
    id_cfg.monitor = Monitor::train_acc;
    id_cfg.early_stop = true;
    id_cfg.seed = seeds.identifier_train;
    LossRecorder recorder(train.size());
    const Model id_init = build_model(spec, seeds.identifier_model);
    out.identifier = tab::train(id_init, train, &val, id_cfg,
                                [&recorder](int epoch, size_t index, double loss) {
                                    recorder.record(epoch, index, loss);
                                });
    out.history = recorder.finalize(train.labels);

    // stages 2-3: per-class partition, then the balanced multiset
    out.partition = partition_classes(out.history, seeds.cluster);
    out.manifest = build_manifest(out.partition, seeds.manifest);
    const LabeledDataset augmented =
        apply_manifest(train, out.manifest, use_eta ? EtaFn(eta_transform) : EtaFn{});
    out.augmented_size = augmented.size();

    // stage 4: robust model from scratch, trained exactly as the ERM
    // counterpart (early stopping on validation accuracy)
    TrainConfig robust_cfg = config;
    robust_cfg.monitor = Monitor::val_acc;
    robust_cfg.early_stop = true;
    robust_cfg.seed = seeds.robust_train;
    const Model robust_init = build_model(spec, seeds.robust_model);
    out.robust = tab::train(robust_init, augmented, &val, robust_cfg);

    if (test) {
        std::vector<size_t> idx(test->size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        out.test_predictions.reserve(test->size());
        for (size_t start = 0; start < test->size(); start += config.batch_size) {
            const size_t bn = std::min<size_t>(config.batch_size, test->size() - start);
            auto be = per_sample_losses(out.robust.model, *test,
                                        std::span<const size_t>(idx.data() + start, bn));
            out.test_predictions.insert(out.test_predictions.end(),
                                        be.predictions.begin(), be.predictions.end());
        }
    }
    return out;
}

}  // namespace tab
