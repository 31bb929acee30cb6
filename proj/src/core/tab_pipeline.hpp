#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/clustering.hpp"
#include "core/dataset.hpp"
#include "core/history.hpp"
#include "core/nn.hpp"

namespace tab {

// Per-class majority/minority split of training indices, discovered by
// two-cluster k-means over loss-history rows.
struct PseudoGroupPartition {
    struct ClassSplit {
        int label = 0;
        std::vector<size_t> majority;  // indices into the training set
        std::vector<size_t> minority;
    };
    std::vector<ClassSplit> classes;  // ordered by label, present classes only

    const ClassSplit* find(int label) const;
};

// Concrete realization of the augmented multiset: which minority samples are
// duplicated and how many times (z_l total per class).
struct AugmentationManifest {
    struct Entry {
        size_t index = 0;      // training-set sample index
        int copies = 0;        // extra copies, >= 1
        uint64_t transform_seed = 0;
    };
    struct ClassInfo {
        int label = 0;
        size_t z = 0;              // |D_l+| - |D_l-|
        size_t minority_size = 0;
        bool skipped_empty_minority = false;
    };
    std::vector<Entry> entries;  // ascending by index
    std::vector<ClassInfo> classes;

    size_t total_copies() const;
};

// Clusters each class's loss-history rows with kmeans2; the larger cluster
// becomes the majority. Exact size ties go to the cluster with the higher
// mean final-epoch loss, which becomes the minority.
PseudoGroupPartition partition_classes(const LossHistoryMatrix& h, uint64_t seed = 0);

// Draws z_l indices per class uniformly with replacement from the minority
// cluster and aggregates repeats into per-entry copy counts. Classes with an
// empty minority are skipped and flagged.
AugmentationManifest build_manifest(const PseudoGroupPartition& partition, uint64_t seed);

// Transform applied to duplicated samples; receives the entry's seed mixed
// with the duplicate ordinal so repeated copies of one sample differ.
using EtaFn = std::function<SampleData(const float* img, int c, int h, int w,
                                       uint64_t seed)>;

// Original samples followed by the manifest's duplicates. Without a transform
// the duplicates share pixel storage with their sources.
LabeledDataset apply_manifest(const LabeledDataset& train,
                              const AugmentationManifest& manifest,
                              const EtaFn& transform = {});

// Seeded rotation (Unif[-pi/6, pi/6], bilinear, zero fill), translation
// (Unif[0, W/10] x Unif[0, H/10]), then a 5x5 Gaussian blur; clamped to [0,1].
SampleData eta_transform(const float* img, int c, int h, int w, uint64_t seed);

// Deterministic building block behind eta_transform, with the blur stage
// switchable so tests can compose identities.
SampleData eta_apply(const float* img, int c, int h, int w, double theta, double dx,
                     double dy, bool blur);

// Manifest file: JSON object with a "classes" header array
// [{"label", "z", "minority_size"}] and an "entries" array
// [{"index", "copies", "transform_seed"}].
void write_manifest(const AugmentationManifest& manifest, const std::string& path);
AugmentationManifest read_manifest(const std::string& path);

// Stage seed derivations; the robust model shares the final-model streams
// with its ERM counterpart, so its init never depends on the identifier.
struct TabSeeds {
    uint64_t identifier_model = 0;
    uint64_t identifier_train = 0;
    uint64_t cluster = 0;
    uint64_t manifest = 0;
    uint64_t robust_model = 0;
    uint64_t robust_train = 0;
};
TabSeeds tab_stage_seeds(uint64_t seed);

struct TabRunResult {
    TrainResult identifier;
    LossHistoryMatrix history;
    PseudoGroupPartition partition;
    AugmentationManifest manifest;
    TrainResult robust;
    std::vector<int> test_predictions;  // empty when no test set given
    size_t augmented_size = 0;
};

// Full pipeline: train the identifier with early stopping on training
// accuracy while recording losses, partition per class, build and apply the
// manifest, then train a fresh model on the augmented multiset with the same
// config as the ERM counterpart. Takes no tunables beyond the base config
// and a seed; use_eta switches on the appendix-style duplicate transform.
TabRunResult run_tab(const ModelSpec& spec, const LabeledDataset& train,
                     const LabeledDataset& val, const LabeledDataset* test,
                     const TrainConfig& config, uint64_t seed, bool use_eta = false);

}  // namespace tab
