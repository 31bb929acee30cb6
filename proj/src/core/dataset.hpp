#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace tab {

// One sample's pixel buffer. Samples are shared between datasets (and between
// an original and its duplicates) via shared_ptr, so duplicating a sample
// never copies pixels unless a transform produces new ones.
using SampleData = std::vector<float>;
using SampleRef = std::shared_ptr<const SampleData>;

struct LabeledDataset {
    int channels = 0;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    int num_groups = 0;
    std::vector<SampleRef> features;  // each of size channels*height*width
    std::vector<int> labels;
    std::vector<int> groups;  // empty when group ids are absent
    std::string split_tag;    // "train" | "val" | "test"
    std::string meta;         // JSON: generator name, p, seed, colors, ...

    size_t size() const { return features.size(); }
    size_t sample_values() const {
        return static_cast<size_t>(channels) * height * width;
    }
    bool has_groups() const { return !groups.empty(); }
    const float* sample(size_t i) const { return features[i]->data(); }

    // Checks the structural invariants (shapes, label/group ranges). Throws
    // std::runtime_error on violation.
    void validate() const;
};

struct RawDigits {
    int height = 0;
    int width = 0;
    std::vector<std::vector<float>> pixels;  // grayscale in [0,1]
    std::vector<int> labels;                 // digit ids 0-9

    size_t size() const { return pixels.size(); }
};

struct GroupWeights {
    std::vector<double> weight;  // indexed by group id, size num_groups
};

struct GenResult {
    LabeledDataset train;
    LabeledDataset val;
    LabeledDataset test;
};

// Reads a pair of IDX files (big-endian; images magic 0x00000803, labels
// magic 0x00000801). Pixels are scaled to [0,1] by dividing by 255.
RawDigits import_idx(const std::string& images_path, const std::string& labels_path);

// Binary (even/odd) colored-digit task, L=2, k=4 groups. For each class,
// exactly round(p * class_size) samples get the class-aligned color (odd=red,
// even=green); the rest get the other color. The test split is group-balanced.
// When source is null, digits come from the seeded procedural glyph
// synthesizer and the pool never exhausts.
GenResult gen_even_odd(size_t n_train, size_t n_val, double p, uint64_t seed,
                       const RawDigits* source = nullptr);

// Ten-class colored-digit task, L=10, k=100 groups. Ten RGB colors are drawn
// once from the seed and recorded in dataset meta; misaligned samples get a
// color drawn from the remaining nine.
GenResult gen_cmnist(size_t n_train, size_t n_val, double p, uint64_t seed,
                     const RawDigits* source = nullptr);

// weight(g) = freq_train(g) / freq_eval(g), renormalized so the weighted
// eval-sample count equals the raw eval count. Groups absent from train get
// weight 0.
GroupWeights group_weights(const LabeledDataset& train, const LabeledDataset& eval);

// Group ids encode (class, spurious attribute) as g = label * A + attribute,
// with the aligned attribute for class l being l itself in both generators.
std::vector<int> bias_conflicting_groups(int num_classes, int num_groups);

// TABD container: magic "TABD", u32 version=1, u64 N, u32 C,H,W, u32 L,
// u32 k, N*C*H*W little-endian f32, N u32 labels (groups use the 0xFFFFFFFF
// sentinel when absent), then a u32-length-prefixed UTF-8 metadata string.
void write_tabd(const LabeledDataset& ds, const std::string& path);
LabeledDataset read_tabd(const std::string& path);

}  // namespace tab
