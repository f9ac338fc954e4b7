#pragma once

#include "batchlab/synthdata.hpp"

#include <filesystem>
#include <string>

namespace testutil {

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("batchlab_unit_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Split with every sample in train and the given labeled sets.
inline batchlab::DataSplit all_train(std::size_t n, std::vector<batchlab::IndexList> labeled) {
    batchlab::DataSplit s;
    for (std::size_t i = 0; i < n; ++i) s.train_idx.push_back(i);
    s.labeled_idx = std::move(labeled);
    return s;
}

}  // namespace testutil
