#include "vsr/dataset.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>

#include "json.hpp"
#include "vsr/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace vsr {
namespace {

std::string tile_name(const char* kind, uint32_t id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "tiles/%s_%05u.vsrt", kind, id);
    return buf;
}

std::string fold_name(Fold f) { return f == Fold::train ? "train" : "validation"; }

Fold fold_from(const std::string& s, uint32_t id) {
    if (s == "train") return Fold::train;
    if (s == "validation") return Fold::validation;
    throw DataError("manifest: tile " + std::to_string(id) + " has unknown fold '" + s + "'");
}

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
    return buf;
}

uint64_t parse_hex64(const std::string& s, const std::string& what) {
    if (s.size() != 16) throw DataError(what + ": bad digest string '" + s + "'");
    uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= uint64_t(c - '0');
        else if (c >= 'a' && c <= 'f') v |= uint64_t(c - 'a' + 10);
        else throw DataError(what + ": bad digest string '" + s + "'");
    }
    return v;
}

void write_manifest(const std::string& root, const DatasetManifest& m) {
    ordered_json j;
    j["format"] = 1;
    j["seed"] = m.seed;
    j["grid_tiles"] = m.grid_tiles;
    j["cell"] = m.cell;
    j["source_size"] = m.source_size;
    j["scale"] = m.scale;
    j["bands"] = m.bands;
    j["dates"] = m.dates;
    ordered_json entries = ordered_json::array();
    for (const auto& e : m.entries) {
        ordered_json je;
        je["id"] = e.id;
        je["gi"] = e.gi;
        je["gj"] = e.gj;
        je["fold"] = fold_name(e.fold);
        je["water"] = e.water;
        je["coarse_file"] = e.coarse_file;
        je["fine_file"] = e.fine_file;
        je["coarse_digest"] = hex64(e.coarse_digest);
        je["fine_digest"] = hex64(e.fine_digest);
        entries.push_back(std::move(je));
    }
    j["tiles"] = std::move(entries);
    write_text_atomic(root + "/manifest.json", j.dump(2) + "\n");
}

}  // namespace

DatasetManifest load_manifest(const std::string& root) {
    const std::string path = root + "/manifest.json";
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path + ": " + e.what());
    }
    DatasetManifest m;
    try {
        if (j.at("format").get<int>() != 1)
            throw DataError("manifest " + path + ": unsupported format");
        m.seed = j.at("seed").get<uint64_t>();
        m.grid_tiles = j.at("grid_tiles").get<uint32_t>();
        m.cell = j.at("cell").get<uint32_t>();
        m.source_size = j.at("source_size").get<size_t>();
        m.scale = j.at("scale").get<size_t>();
        m.bands = j.at("bands").get<size_t>();
        m.dates = j.at("dates").get<size_t>();
        for (const auto& je : j.at("tiles")) {
            DatasetManifestEntry e;
            e.id = je.at("id").get<uint32_t>();
            e.gi = je.at("gi").get<uint32_t>();
            e.gj = je.at("gj").get<uint32_t>();
            e.fold = fold_from(je.at("fold").get<std::string>(), e.id);
            e.water = je.at("water").get<bool>();
            e.coarse_file = je.at("coarse_file").get<std::string>();
            e.fine_file = je.at("fine_file").get<std::string>();
            e.coarse_digest = parse_hex64(je.at("coarse_digest").get<std::string>(), "manifest");
            e.fine_digest = parse_hex64(je.at("fine_digest").get<std::string>(), "manifest");
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path + ": " + e.what());
    }
    return m;
}

DatasetStats load_stats(const std::string& root) {
    const std::string path = root + "/stats.json";
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("stats " + path + ": " + e.what());
    }
    DatasetStats st;
    try {
        st.band_mean = j.at("band_mean").get<std::vector<float>>();
        st.band_std = j.at("band_std").get<std::vector<float>>();
        st.chm_min = j.at("chm_min").get<float>();
        st.chm_max = j.at("chm_max").get<float>();
        const uint64_t want = parse_hex64(j.at("digest").get<std::string>(), "stats");
        if (st.digest() != want)
            throw DataError("stats " + path + ": digest mismatch (file corrupt or edited)");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("stats " + path + ": " + e.what());
    }
    return st;
}

void save_stats(const std::string& root, const DatasetStats& stats) {
    ordered_json j;
    j["band_mean"] = stats.band_mean;
    j["band_std"] = stats.band_std;
    j["chm_min"] = stats.chm_min;
    j["chm_max"] = stats.chm_max;
    j["digest"] = hex64(stats.digest());
    write_text_atomic(root + "/stats.json", j.dump(2) + "\n");
}

GenSummary generate_dataset(const RunConfig& cfg, const std::string& out_dir) {
    const uint64_t seed = uint64_t(cfg.get_int("data", "seed"));
    const uint32_t grid = uint32_t(cfg.get_int("data", "grid_tiles"));
    const size_t source_size = size_t(cfg.get_int("data", "source_size"));
    const size_t bands = size_t(cfg.get_int("data", "bands"));
    const size_t scale = size_t(cfg.get_int("data", "scale"));
    const size_t dates = size_t(cfg.get_int("data", "dates"));
    const double noise_sigma = cfg.get_double("data", "noise_sigma");
    const double cloud_rate = cfg.get_double("data", "cloud_rate");
    const int64_t trees_min = cfg.get_int("data", "trees_min");
    const int64_t trees_max = cfg.get_int("data", "trees_max");
    const double kappa = cfg.get_double("data", "crown_kappa");
    const double height_max = cfg.get_double("data", "height_max");
    const double water_fraction = cfg.get_double("data", "water_fraction");
    const uint32_t cell = uint32_t(cfg.get_int("data", "cell"));

    if (bands != kBands)
        throw ConfigError("data.bands must be " + std::to_string(kBands) +
                          " (the synthetic band model is fixed)");
    if (grid < 1) throw ConfigError("data.grid_tiles must be >= 1");
    if (trees_min < 1 || trees_max < trees_min)
        throw ConfigError("data.trees_min/trees_max must satisfy 1 <= min <= max");
    const size_t fine = source_size * scale;

    fs::create_directories(fs::path(out_dir) / "tiles");

    // Fold assignment over the full grid.
    std::vector<std::pair<uint32_t, uint32_t>> coords;
    coords.reserve(size_t(grid) * grid);
    for (uint32_t gi = 0; gi < grid; ++gi)
        for (uint32_t gj = 0; gj < grid; ++gj) coords.emplace_back(gi, gj);
    std::vector<Fold> folds = checkerboard_split(coords, cell);

    DatasetManifest m;
    m.seed = seed;
    m.grid_tiles = grid;
    m.cell = cell;
    m.source_size = source_size;
    m.scale = scale;
    m.bands = bands;
    m.dates = dates;

    GenSummary summary;
    std::vector<TilePair> all;
    all.reserve(coords.size());

    for (uint32_t id = 0; id < coords.size(); ++id) {
        const uint64_t tseed = derive_seed(seed, 0x7469000000000000ULL + id);
        Rng meta(derive_seed(tseed, 0xe7a));
        const uint64_t count = uint64_t(trees_min) + meta.below(uint64_t(trees_max - trees_min + 1));
        const CrownShape crown = meta.below(2) == 0 ? CrownShape::cone : CrownShape::paraboloid;
        const bool water = meta.uniform() < water_fraction;

        SceneParams sp;
        sp.fine_size = fine;
        sp.density = (double(count) - 0.5) / double(fine * fine);
        sp.crown = crown;
        sp.kappa = kappa;
        sp.clamp_max = height_max;
        sp.seed = tseed;
        Tensor chm = gen_highres_chm(sp);
        if (water) {
            // Water body: flat zero surface; the tile is flagged and filtered
            // out of training, but stays on disk for bookkeeping.
            chm = Tensor::zeros({1, fine, fine});
        }

        RenderParams rp;
        rp.scale = scale;
        rp.dates = dates;
        rp.noise_sigma = noise_sigma;
        rp.cloud_rate = cloud_rate;
        rp.seed = tseed;
        Tensor composite = median_composite(render_acquisitions(chm, rp));

        TilePair tile;
        tile.id = id;
        tile.gi = coords[id].first;
        tile.gj = coords[id].second;
        tile.coarse = composite;
        tile.fine = chm;
        tile.fold = folds[id];
        tile.water = water;

        DatasetManifestEntry e;
        e.id = id;
        e.gi = tile.gi;
        e.gj = tile.gj;
        e.fold = tile.fold;
        e.water = water;
        e.coarse_file = tile_name("c", id);
        e.fine_file = tile_name("f", id);
        auto cbytes = encode_tile(tile.coarse);
        auto fbytes = encode_tile(tile.fine);
        e.coarse_digest = fnv1a64(cbytes.data(), cbytes.size());
        e.fine_digest = fnv1a64(fbytes.data(), fbytes.size());
        write_file_atomic(out_dir + "/" + e.coarse_file, cbytes);
        write_file_atomic(out_dir + "/" + e.fine_file, fbytes);
        m.entries.push_back(std::move(e));
        all.push_back(std::move(tile));
        if (water) ++summary.water_flagged;
    }
    summary.tiles = all.size();

    FilterResult kept = filter_tiles(std::move(all));
    for (const auto& rej : kept.rejected)
        if (rej.second == "negative-height") ++summary.negative_dropped;
    std::vector<TilePair> train;
    for (const auto& t : kept.kept) {
        if (t.fold == Fold::train) {
            ++summary.train_kept;
            train.push_back(t);
        } else {
            ++summary.validation_kept;
        }
    }
    if (train.empty()) throw DataError("no training tiles survived filtering");
    DatasetStats stats = compute_stats(train, float(height_max));

    write_manifest(out_dir, m);
    save_stats(out_dir, stats);
    return summary;
}

std::vector<TilePair> load_tiles(const std::string& root, const DatasetManifest& manifest) {
    std::vector<TilePair> tiles;
    tiles.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        auto cbytes = read_file_bytes(root + "/" + e.coarse_file);
        if (fnv1a64(cbytes.data(), cbytes.size()) != e.coarse_digest)
            throw DataError("tile " + std::to_string(e.id) + ": " + e.coarse_file +
                            " digest mismatch (corrupt file)");
        auto fbytes = read_file_bytes(root + "/" + e.fine_file);
        if (fnv1a64(fbytes.data(), fbytes.size()) != e.fine_digest)
            throw DataError("tile " + std::to_string(e.id) + ": " + e.fine_file +
                            " digest mismatch (corrupt file)");
        TilePair t;
        t.id = e.id;
        t.gi = e.gi;
        t.gj = e.gj;
        t.fold = e.fold;
        t.water = e.water;
        t.coarse = decode_tile(cbytes, e.coarse_file);
        t.fine = decode_tile(fbytes, e.fine_file);
        if (t.coarse.ndim() != 3 || t.coarse.dim(0) != manifest.bands)
            throw DataError("tile " + std::to_string(e.id) + ": coarse tensor has shape " +
                            shape_str(t.coarse.shape()));
        if (t.fine.ndim() != 3 || t.fine.dim(0) != 1)
            throw DataError("tile " + std::to_string(e.id) + ": fine tensor has shape " +
                            shape_str(t.fine.shape()));
        tiles.push_back(std::move(t));
    }
    return tiles;
}

void split_dataset(const std::string& root, uint32_t cell) {
    DatasetManifest m = load_manifest(root);
    DatasetStats prev = load_stats(root);
    std::vector<std::pair<uint32_t, uint32_t>> coords;
    coords.reserve(m.entries.size());
    for (const auto& e : m.entries) coords.emplace_back(e.gi, e.gj);
    std::vector<Fold> folds = checkerboard_split(coords, cell);
    for (size_t i = 0; i < m.entries.size(); ++i) m.entries[i].fold = folds[i];
    m.cell = cell;

    std::vector<TilePair> tiles = load_tiles(root, m);
    FilterResult kept = filter_tiles(std::move(tiles));
    std::vector<TilePair> train;
    for (const auto& t : kept.kept)
        if (t.fold == Fold::train) train.push_back(t);
    if (train.empty())
        throw DataError("split with cell " + std::to_string(cell) + " leaves no training tiles");
    DatasetStats stats = compute_stats(train, prev.chm_max);

    write_manifest(root, m);
    save_stats(root, stats);
}

}  // namespace vsr
