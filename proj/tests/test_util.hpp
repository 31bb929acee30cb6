#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/rng.hpp"

namespace tab::testutil {

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(p);
    return p;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Two linearly separable 2-D blobs in [0,1]^2, balanced labels, stored as
// (1,1,2) samples.
inline LabeledDataset make_blob_dataset(size_t n, uint64_t seed) {
    LabeledDataset ds;
    ds.channels = 1;
    ds.height = 1;
    ds.width = 2;
    ds.num_classes = 2;
    ds.num_groups = 2;
    ds.split_tag = "train";
    Rng rng(seed);
    for (size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        const float cx = label == 0 ? 0.25f : 0.75f;
        auto s = std::make_shared<SampleData>(2);
        (*s)[0] = cx + static_cast<float>(rng.uniform(-0.08, 0.08));
        (*s)[1] = cx + static_cast<float>(rng.uniform(-0.08, 0.08));
        ds.features.push_back(std::move(s));
        ds.labels.push_back(label);
        ds.groups.push_back(label);
    }
    return ds;
}

}  // namespace tab::testutil
