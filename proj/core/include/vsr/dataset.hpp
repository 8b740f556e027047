#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsr/io.hpp"
#include "vsr/scene.hpp"

namespace vsr {

struct DatasetManifestEntry {
    uint32_t id = 0, gi = 0, gj = 0;
    Fold fold = Fold::train;
    bool water = false;
    std::string coarse_file, fine_file;  // paths relative to the dataset root
    uint64_t coarse_digest = 0, fine_digest = 0;
};

struct DatasetManifest {
    uint64_t seed = 0;
    uint32_t grid_tiles = 0;
    uint32_t cell = 2;
    size_t source_size = 16, scale = 8, bands = 12, dates = 6;
    std::vector<DatasetManifestEntry> entries;  // sorted by id
};

struct GenSummary {
    size_t tiles = 0;
    size_t train_kept = 0, validation_kept = 0;
    size_t water_flagged = 0, negative_dropped = 0;
};

// Synthesizes the full tile grid, writes tiles/ + manifest.json + stats.json
// under out_dir. Fully determined by the [data] section of cfg.
GenSummary generate_dataset(const RunConfig& cfg, const std::string& out_dir);

// Reassigns checkerboard folds with a new cell size and recomputes the
// training-fold statistics in place.
void split_dataset(const std::string& root, uint32_t cell);

DatasetManifest load_manifest(const std::string& root);
DatasetStats load_stats(const std::string& root);
void save_stats(const std::string& root, const DatasetStats& stats);

// Loads every tile listed in the manifest, verifying file digests.
std::vector<TilePair> load_tiles(const std::string& root, const DatasetManifest& manifest);

}  // namespace vsr
