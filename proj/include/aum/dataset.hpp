#pragma once

#include <string>
#include <vector>

#include "aum/training.hpp"

namespace aum {

// One line of a dataset manifest: `path,label` (single-label) or
// `path,id;id;id` (multi-label).
struct ManifestEntry {
    std::string path;
    std::vector<int> labels;
};

std::vector<ManifestEntry> read_manifest_csv(const std::string& path);

// Index written next to cached feature records: `record_path,labels`.
void write_index_csv(const std::vector<ManifestEntry>& entries, const std::string& path);

// Loads every record referenced by an index file into memory.
Dataset load_dataset(const std::string& index_path);

}  // namespace aum
