#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <set>

#include "core/history.hpp"
#include "core/rng.hpp"
#include "core/tab_pipeline.hpp"
#include "test_util.hpp"

using namespace tab;
using tab::testutil::make_blob_dataset;
using tab::testutil::read_bytes;
using tab::testutil::temp_dir;

namespace {

LossHistoryMatrix matrix_from_rows(const std::vector<std::vector<float>>& rows,
                                   std::vector<int> labels) {
    LossHistoryMatrix h;
    h.n = rows.size();
    h.t = rows.front().size();
    for (const auto& r : rows) h.values.insert(h.values.end(), r.begin(), r.end());
    h.labels = std::move(labels);
    return h;
}

ModelSpec blob_spec() {
    ModelSpec spec;
    spec.kind = ModelKind::mlp;
    spec.in_channels = 1;
    spec.in_height = 1;
    spec.in_width = 2;
    spec.num_classes = 2;
    spec.hidden = {8};
    return spec;
}

}  // namespace

TEST_CASE("minority is the smaller cluster, not the lower-loss one") {
    const auto h = matrix_from_rows(
        {{5.0f, 4.0f, 3.0f}, {5.0f, 4.0f, 3.0f}, {5.0f, 4.0f, 3.0f},
         {0.1f, 0.05f, 0.0f}},
        {0, 0, 0, 0});
    const auto part = partition_classes(h, 1);
    REQUIRE(part.classes.size() == 1);
    CHECK(part.classes[0].majority == std::vector<size_t>{0, 1, 2});
    CHECK(part.classes[0].minority == std::vector<size_t>{3});
}

TEST_CASE("size ties break toward the higher mean final-epoch loss") {
    const auto h = matrix_from_rows(
        {{1.0f, 1.0f, 1.0f}, {1.1f, 1.1f, 1.1f},
         {5.0f, 5.0f, 5.0f}, {5.1f, 5.1f, 5.1f}},
        {0, 0, 0, 0});
    const auto part = partition_classes(h, 2);
    REQUIRE(part.classes.size() == 1);
    CHECK(part.classes[0].minority == std::vector<size_t>{2, 3});
    CHECK(part.classes[0].majority == std::vector<size_t>{0, 1});
}

TEST_CASE("classes are partitioned independently and singletons stay whole") {
    const auto h = matrix_from_rows(
        {{0.1f, 0.1f}, {0.2f, 0.2f}, {7.0f, 7.0f},  // class 0
         {3.0f, 3.0f}},                             // class 1, singleton
        {0, 0, 0, 1});
    const auto part = partition_classes(h, 5);
    REQUIRE(part.classes.size() == 2);
    const auto* c0 = part.find(0);
    const auto* c1 = part.find(1);
    REQUIRE(c0 != nullptr);
    REQUIRE(c1 != nullptr);
    CHECK(c0->minority == std::vector<size_t>{2});
    CHECK(c1->majority == std::vector<size_t>{3});
    CHECK(c1->minority.empty());
}

TEST_CASE("manifest arithmetic: 7 majority and 3 minority give z = 4") {
    PseudoGroupPartition part;
    PseudoGroupPartition::ClassSplit split;
    split.label = 0;
    split.majority = {0, 1, 2, 3, 4, 5, 6};
    split.minority = {10, 11, 12};
    part.classes.push_back(split);
    const auto m = build_manifest(part, 42);
    REQUIRE(m.classes.size() == 1);
    CHECK(m.classes[0].z == 4);
    CHECK(m.classes[0].minority_size == 3);
    CHECK(m.total_copies() == 4);
    for (const auto& e : m.entries) {
        CHECK(e.index >= 10);
        CHECK(e.index <= 12);
        CHECK(e.copies >= 1);
    }
}

TEST_CASE("golden seeded draw over a 3-element minority with z = 4") {
    PseudoGroupPartition part;
    PseudoGroupPartition::ClassSplit split;
    split.label = 0;
    split.majority = {0, 1, 2, 3, 4, 5, 6};
    split.minority = {10, 11, 12};
    part.classes.push_back(split);
    const auto m = build_manifest(part, 99);
    // frozen from the seeded sampler (with-replacement draw)
    REQUIRE(m.entries.size() == 2);
    CHECK(m.entries[0].index == 10);
    CHECK(m.entries[0].copies == 2);
    CHECK(m.entries[0].transform_seed == 1662855668513510488ULL);
    CHECK(m.entries[1].index == 11);
    CHECK(m.entries[1].copies == 2);
    CHECK(m.entries[1].transform_seed == 5398238271966732363ULL);
    CHECK(m.total_copies() == 4);
}

TEST_CASE("equal cluster sizes give z = 0 and an empty manifest") {
    PseudoGroupPartition part;
    PseudoGroupPartition::ClassSplit split;
    split.label = 1;
    split.majority = {0, 1};
    split.minority = {2, 3};
    part.classes.push_back(split);
    const auto m = build_manifest(part, 7);
    CHECK(m.classes[0].z == 0);
    CHECK(m.entries.empty());
}

TEST_CASE("empty minority with positive z is skipped and flagged") {
    PseudoGroupPartition part;
    PseudoGroupPartition::ClassSplit split;
    split.label = 0;
    split.majority = {0};
    part.classes.push_back(split);
    const auto m = build_manifest(part, 7);
    REQUIRE(m.classes.size() == 1);
    CHECK(m.classes[0].skipped_empty_minority);
    CHECK(m.entries.empty());
}

TEST_CASE("apply_manifest duplicates samples after the originals") {
    auto ds = make_blob_dataset(5, 1);
    SUBCASE("empty manifest is the identity") {
        const auto out = apply_manifest(ds, AugmentationManifest{});
        CHECK(out.size() == 5);
        for (size_t i = 0; i < 5; ++i) CHECK(out.features[i] == ds.features[i]);
    }
    SUBCASE("three copies of sample 2 land at positions 5..7 sharing storage") {
        AugmentationManifest m;
        m.entries.push_back({2, 3, 77});
        const auto out = apply_manifest(ds, m);
        REQUIRE(out.size() == 8);
        for (size_t i = 5; i < 8; ++i) {
            CHECK(out.features[i] == ds.features[2]);  // shared pointer
            CHECK(out.labels[i] == ds.labels[2]);
            CHECK(out.groups[i] == ds.groups[2]);
        }
    }
    SUBCASE("out-of-range index is rejected") {
        AugmentationManifest m;
        m.entries.push_back({9, 1, 0});
        CHECK_THROWS_AS(apply_manifest(ds, m), std::runtime_error);
    }
}

TEST_CASE("transformed duplicates differ from sources but keep label and range") {
    LabeledDataset ds;
    ds.channels = 3;
    ds.height = 12;
    ds.width = 12;
    ds.num_classes = 2;
    ds.num_groups = 4;
    Rng rng(8);
    auto img = std::make_shared<SampleData>(3 * 12 * 12);
    for (auto& v : *img) v = static_cast<float>(rng.uniform());
    ds.features.push_back(img);
    ds.labels.push_back(1);
    ds.groups.push_back(3);

    AugmentationManifest m;
    m.entries.push_back({0, 100, 4242});
    const auto out = apply_manifest(ds, m, eta_transform);
    REQUIRE(out.size() == 101);
    std::set<SampleData> seen;
    for (size_t i = 1; i < out.size(); ++i) {
        CHECK(out.labels[i] == 1);
        CHECK(out.groups[i] == 3);
        CHECK(*out.features[i] != *img);
        for (float v : *out.features[i]) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        seen.insert(*out.features[i]);
    }
    CHECK(seen.size() > 90);  // per-duplicate seeds give distinct transforms
}

TEST_CASE("eta with zero angle, zero shift, and no blur is the identity") {
    Rng rng(5);
    SampleData img(3 * 9 * 9);
    for (auto& v : img) v = static_cast<float>(rng.uniform());
    const auto out = eta_apply(img.data(), 3, 9, 9, 0.0, 0.0, 0.0, false);
    REQUIRE(out.size() == img.size());
    for (size_t i = 0; i < img.size(); ++i) {
        CHECK(out[i] == doctest::Approx(img[i]).epsilon(1e-6));
    }
}

TEST_CASE("eta maps an all-zeros image to all zeros") {
    SampleData img(3 * 8 * 8, 0.0f);
    const auto out = eta_transform(img.data(), 3, 8, 8, 123);
    for (float v : out) CHECK(v == 0.0f);
}

TEST_CASE("blurring a single bright pixel matches a direct convolution oracle") {
    const int h = 11, w = 11;
    SampleData img(h * w, 0.0f);
    img[5 * w + 5] = 1.0f;
    const auto out = eta_apply(img.data(), 1, h, w, 0.0, 0.0, 0.0, true);

    // direct 2-D convolution with the separable 5x5 Gaussian
    const double k1[5] = {0.05448868, 0.24420134, 0.40261996, 0.24420134, 0.05448868};
    double mass = 0.0;
    int nonzero = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double want = 0.0;
            if (std::abs(y - 5) <= 2 && std::abs(x - 5) <= 2) {
                want = k1[y - 3] * k1[x - 3];
            }
            CHECK(out[y * w + x] == doctest::Approx(want).epsilon(1e-5));
            mass += out[y * w + x];
            if (out[y * w + x] > 0.0f) ++nonzero;
        }
    }
    CHECK(nonzero <= 25);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("manifest JSON round-trips bit-exactly, fuzzed") {
    const auto dir = temp_dir("tab_test_tab");
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        AugmentationManifest m;
        const int classes = 1 + static_cast<int>(rng.index(4));
        size_t next_index = 0;
        for (int c = 0; c < classes; ++c) {
            AugmentationManifest::ClassInfo info;
            info.label = c;
            info.minority_size = rng.index(5);
            info.z = rng.index(6);
            info.skipped_empty_minority = info.minority_size == 0 && info.z > 0;
            m.classes.push_back(info);
            if (!info.skipped_empty_minority) {
                size_t remaining = info.z;
                while (remaining > 0) {
                    const int copies =
                        1 + static_cast<int>(rng.index(remaining));
                    m.entries.push_back({next_index++, copies, rng.next_u64()});
                    remaining -= static_cast<size_t>(copies);
                }
            }
        }
        const auto p1 = dir / ("m1_" + std::to_string(seed) + ".json");
        const auto p2 = dir / ("m2_" + std::to_string(seed) + ".json");
        write_manifest(m, p1.string());
        const auto back = read_manifest(p1.string());
        REQUIRE(back.entries.size() == m.entries.size());
        for (size_t i = 0; i < m.entries.size(); ++i) {
            CHECK(back.entries[i].index == m.entries[i].index);
            CHECK(back.entries[i].copies == m.entries[i].copies);
            CHECK(back.entries[i].transform_seed == m.entries[i].transform_seed);
        }
        write_manifest(back, p2.string());
        CHECK(read_bytes(p1) == read_bytes(p2));
    }
    CHECK_THROWS_WITH_AS(read_manifest((dir / "missing.json").string()),
                         doctest::Contains("cannot open"), std::runtime_error);
}

TEST_CASE("stage seeds: robust init is a fresh draw, independent per stage") {
    const auto s1 = tab_stage_seeds(1);
    const auto s2 = tab_stage_seeds(2);
    CHECK(s1.identifier_model != s1.robust_model);
    CHECK(s1.identifier_train != s1.robust_train);
    CHECK(s1.robust_model != s2.robust_model);
    const auto spec = blob_spec();
    const auto a = build_model(spec, s1.robust_model);
    const auto b = build_model(spec, s2.robust_model);
    CHECK(a.params != b.params);
    // same pipeline seed always yields the same robust init, whatever the
    // identifier saw
    const auto c = build_model(spec, tab_stage_seeds(1).robust_model);
    CHECK(a.params == c.params);
}

TEST_CASE("run_tab on the blob task satisfies the count law") {
    const auto train_ds = make_blob_dataset(120, 31);
    const auto val_ds = make_blob_dataset(40, 32);
    const auto test_ds = make_blob_dataset(40, 33);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.max_epochs = 25;
    cfg.batch_size = 32;
    cfg.seed = 0;
    const auto res = run_tab(blob_spec(), train_ds, val_ds, &test_ds, cfg, 77);

    CHECK(res.history.n == train_ds.size());
    CHECK(res.history.t == static_cast<size_t>(res.identifier.epochs_run));
    size_t z_total = 0;
    for (const auto& split : res.partition.classes) {
        const AugmentationManifest::ClassInfo* info = nullptr;
        for (const auto& ci : res.manifest.classes) {
            if (ci.label == split.label) info = &ci;
        }
        REQUIRE(info != nullptr);
        CHECK(info->z == split.majority.size() - split.minority.size());
        if (!info->skipped_empty_minority) {
            size_t class_copies = 0;
            for (const auto& e : res.manifest.entries) {
                if (train_ds.labels[e.index] == split.label) class_copies += e.copies;
            }
            // post-augmentation minority count equals the majority count
            CHECK(split.minority.size() + class_copies == split.majority.size());
            z_total += class_copies;
        }
    }
    CHECK(res.augmented_size == train_ds.size() + z_total);
    CHECK(res.test_predictions.size() == test_ds.size());
}

TEST_CASE("run_tab completes on a degenerate single-class dataset") {
    auto ds = make_blob_dataset(40, 3);
    for (auto& l : ds.labels) l = 0;
    for (auto& g : ds.groups) g = 0;
    TrainConfig cfg;
    cfg.max_epochs = 6;
    cfg.batch_size = 16;
    const auto res = run_tab(blob_spec(), ds, ds, nullptr, cfg, 5);
    REQUIRE(res.partition.classes.size() == 1);
    CHECK(res.partition.classes[0].majority.size() +
              res.partition.classes[0].minority.size() ==
          ds.size());
}
