#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tab {

// N x T matrix of per-sample per-epoch training losses; row i is sample i's
// chronological loss sequence from the identifier run.
struct LossHistoryMatrix {
    size_t n = 0;
    size_t t = 0;
    std::vector<float> values;  // row-major, n * t
    std::vector<int> labels;    // per-row class id

    float at(size_t i, size_t epoch) const { return values[i * t + epoch]; }
};

// Collects the per-epoch loss vectors emitted by a training run's recorder
// hook. Single-writer: the training loop.
class LossRecorder {
public:
    explicit LossRecorder(size_t n) : n_(n) {}

    // epoch is 1-based, as reported by train().
    void record(int epoch, size_t index, double loss);

    LossHistoryMatrix finalize(std::vector<int> labels) const;

private:
    size_t n_;
    std::vector<std::vector<float>> epochs_;
};

// Stacks explicit per-epoch loss vectors (each of length N). Rejects ragged
// input and non-finite entries, naming the offending (row, epoch).
LossHistoryMatrix finalize_history(const std::vector<std::vector<float>>& per_epoch,
                                   std::vector<int> labels);

// TABH container: magic "TABH", u32 version=1, u64 N, u64 T, N*T
// little-endian f32 row-major, then N u32 labels. File size is exactly
// 24 + 4*N*T + 4*N bytes.
void write_tabh(const LossHistoryMatrix& h, const std::string& path);
LossHistoryMatrix read_tabh(const std::string& path);

}  // namespace tab
