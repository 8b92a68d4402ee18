#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cpga/tensor.hpp"

namespace cpga::data {

// 8-bit RGB PNG decode; grayscale is promoted to three channels and alpha is
// dropped. Values map to [0,1] via /255.
Tensor load_image(const std::filesystem::path& path);

// Writes [3,H,W] as RGB or [1,H,W] as grayscale; values clamped to [0,1] and
// rounded half-up to 8 bits.
void save_image(const Tensor& img, const std::filesystem::path& path);

struct PairedSample {
    Tensor low;
    Tensor gt;
    std::string id;
};

struct DatasetLayout {
    std::string low_dir = "low";
    std::string gt_dir = "high";
};

struct DatasetIndex {
    std::filesystem::path root;
    std::string split; // free-form tag, e.g. "train" / "test"
    struct Entry {
        std::filesystem::path low_path;
        std::filesystem::path gt_path;
        std::string id;
    };
    std::vector<Entry> entries;
    std::vector<std::string> unmatched; // stems present on one side only

    size_t size() const { return entries.size(); }
};

// Pairs files by identical stem between <root>/low and <root>/high (or the
// given layout), ordered lexicographically. Unmatched stems are reported in
// the index and skipped; an empty intersection is an error.
DatasetIndex scan_dataset(const std::filesystem::path& root, const DatasetLayout& layout = {},
                          const std::string& split = "train");

PairedSample load_pair(const DatasetIndex::Entry& entry);

// Identical crop window for low and gt, chosen from the seed.
PairedSample random_patch_pair(const PairedSample& s, int size, uint64_t seed);

// Horizontal flip with probability 1/2, applied to both planes.
PairedSample augment(const PairedSample& s, uint64_t seed);

} // namespace cpga::data
