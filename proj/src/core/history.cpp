#include "core/history.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

void LossRecorder::record(int epoch, size_t index, double loss) {
    if (epoch < 1) fail("recorder epoch must be 1-based");
    if (index >= n_) fail("recorder sample index out of range");
    while (epochs_.size() < static_cast<size_t>(epoch)) {
        epochs_.emplace_back(n_, std::numeric_limits<float>::quiet_NaN());
    }
    epochs_[epoch - 1][index] = static_cast<float>(loss);
}

LossHistoryMatrix LossRecorder::finalize(std::vector<int> labels) const {
    return finalize_history(epochs_, std::move(labels));
}

LossHistoryMatrix finalize_history(const std::vector<std::vector<float>>& per_epoch,
                                   std::vector<int> labels) {
    if (per_epoch.empty()) fail("no epochs recorded");
    const size_t n = per_epoch.front().size();
    if (n == 0) fail("empty epoch vector");
    if (labels.size() != n) fail("label count does not match sample count");
    LossHistoryMatrix h;
    h.n = n;
    h.t = per_epoch.size();
    h.values.resize(n * h.t);
    for (size_t e = 0; e < h.t; ++e) {
        if (per_epoch[e].size() != n) {
            fail("ragged loss history: epoch " + std::to_string(e + 1) + " has " +
                 std::to_string(per_epoch[e].size()) + " entries, expected " +
                 std::to_string(n));
        }
        for (size_t i = 0; i < n; ++i) {
            const float v = per_epoch[e][i];
            if (!std::isfinite(v) || v < 0.0f) {
                fail("invalid loss history entry at sample " + std::to_string(i) +
                     ", epoch " + std::to_string(e + 1));
            }
            h.values[i * h.t + e] = v;
        }
    }
    h.labels = std::move(labels);
    return h;
}

void write_tabh(const LossHistoryMatrix& h, const std::string& path) {
    if (h.values.size() != h.n * h.t || h.labels.size() != h.n) {
        fail("inconsistent loss history matrix");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open for write: " + path);
    out.write("TABH", 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t n = h.n, t = h.t;
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&t), 8);
    out.write(reinterpret_cast<const char*>(h.values.data()),
              static_cast<std::streamsize>(h.values.size() * sizeof(float)));
    for (int l : h.labels) {
        const uint32_t v = static_cast<uint32_t>(l);
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    if (!out) fail("write failed: " + path);
}

LossHistoryMatrix read_tabh(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "TABH", 4) != 0) {
        fail("bad magic in TABH file: " + path);
    }
    uint32_t version = 0;
    if (!in.read(reinterpret_cast<char*>(&version), 4) || version != 1) {
        fail("unsupported TABH version");
    }
    LossHistoryMatrix h;
    uint64_t n = 0, t = 0;
    if (!in.read(reinterpret_cast<char*>(&n), 8) ||
        !in.read(reinterpret_cast<char*>(&t), 8)) {
        fail("truncated TABH header");
    }
    h.n = n;
    h.t = t;
    h.values.resize(n * t);
    if (!in.read(reinterpret_cast<char*>(h.values.data()),
                 static_cast<std::streamsize>(h.values.size() * sizeof(float)))) {
        fail("payload shorter than header claims: values");
    }
    h.labels.resize(n);
    for (auto& l : h.labels) {
        uint32_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), 4)) {
            fail("payload shorter than header claims: labels");
        }
        l = static_cast<int>(v);
    }
    return h;
}

}  // namespace tab
