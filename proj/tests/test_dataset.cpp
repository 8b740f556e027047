#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "vsr/dataset.hpp"

using namespace vsr;
namespace fs = std::filesystem;

namespace {

std::string small_cfg_text() {
    return "[data]\n"
           "seed = 777\n"
           "grid_tiles = 6\n"
           "source_size = 8\n"
           "scale = 4\n"
           "dates = 4\n"
           "trees_min = 4\n"
           "trees_max = 12\n"
           "water_fraction = 0.15\n"
           "cell = 2\n";
}

RunConfig small_cfg() { return RunConfig::parse_text(small_cfg_text(), "test config"); }

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("vsr_ds_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::vector<uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("generation is deterministic and byte-identical across runs") {
    TempDir a("det_a"), b("det_b");
    GenSummary sa = generate_dataset(small_cfg(), a.str());
    GenSummary sb = generate_dataset(small_cfg(), b.str());
    CHECK(sa.tiles == 36);
    CHECK(sa.tiles == sb.tiles);
    CHECK(sa.train_kept == sb.train_kept);
    CHECK(sa.water_flagged == sb.water_flagged);

    // Every file produced must match byte for byte.
    std::set<std::string> rel;
    for (const auto& ent : fs::recursive_directory_iterator(a.path))
        if (ent.is_regular_file()) rel.insert(fs::relative(ent.path(), a.path).string());
    std::set<std::string> rel_b;
    for (const auto& ent : fs::recursive_directory_iterator(b.path))
        if (ent.is_regular_file()) rel_b.insert(fs::relative(ent.path(), b.path).string());
    REQUIRE(rel == rel_b);
    REQUIRE(rel.size() == 36 * 2 + 2);  // tiles + manifest.json + stats.json
    for (const auto& r : rel) CHECK(slurp(a.path / r) == slurp(b.path / r));
}

TEST_CASE("manifest and stats round-trip through disk") {
    TempDir dir("round");
    generate_dataset(small_cfg(), dir.str());

    DatasetManifest m = load_manifest(dir.str());
    CHECK(m.seed == 777);
    CHECK(m.grid_tiles == 6);
    CHECK(m.cell == 2);
    CHECK(m.source_size == 8);
    CHECK(m.scale == 4);
    CHECK(m.bands == 12);
    CHECK(m.dates == 4);
    REQUIRE(m.entries.size() == 36);
    for (uint32_t i = 0; i < 36; ++i) {
        CHECK(m.entries[i].id == i);
        CHECK(m.entries[i].gi == i / 6);
        CHECK(m.entries[i].gj == i % 6);
    }

    DatasetStats st = load_stats(dir.str());
    REQUIRE(st.band_mean.size() == kBands);
    REQUIRE(st.band_std.size() == kBands);
    CHECK(st.chm_min == 0.0f);
    CHECK(st.chm_max == 120.0f);
    const auto& stds = st.band_std;
    for (float s : stds) CHECK(s > 0.0f);

    // Saving what we loaded reproduces the file exactly.
    auto before = slurp(dir.path / "stats.json");
    save_stats(dir.str(), st);
    CHECK(slurp(dir.path / "stats.json") == before);
}

TEST_CASE("load_tiles returns decoded tensors matching the manifest") {
    TempDir dir("load");
    generate_dataset(small_cfg(), dir.str());
    DatasetManifest m = load_manifest(dir.str());
    std::vector<TilePair> tiles = load_tiles(dir.str(), m);
    REQUIRE(tiles.size() == 36);

    size_t water = 0;
    for (size_t i = 0; i < tiles.size(); ++i) {
        const auto& t = tiles[i];
        const auto& e = m.entries[i];
        CHECK(t.id == e.id);
        CHECK(t.gi == e.gi);
        CHECK(t.gj == e.gj);
        CHECK(t.fold == e.fold);
        CHECK(t.water == e.water);
        REQUIRE(t.coarse.ndim() == 3);
        CHECK(t.coarse.dim(0) == kBands);
        CHECK(t.coarse.dim(1) == 8);
        CHECK(t.coarse.dim(2) == 8);
        REQUIRE(t.fine.ndim() == 3);
        CHECK(t.fine.dim(0) == 1);
        CHECK(t.fine.dim(1) == 32);
        CHECK(t.fine.dim(2) == 32);
        const float* f = t.fine.data();
        for (size_t k = 0; k < t.fine.numel(); ++k) {
            CHECK(f[k] >= 0.0f);
            CHECK(f[k] <= 120.0f);
        }
        if (t.water) {
            ++water;
            bool all_zero = true;
            for (size_t k = 0; k < t.fine.numel() && all_zero; ++k) all_zero = f[k] == 0.0f;
            CHECK(all_zero);
        }
    }
    // Folds follow the checkerboard rule with cell 2.
    for (const auto& t : tiles) {
        Fold want = ((t.gi / 2 + t.gj / 2) % 2 == 0) ? Fold::train : Fold::validation;
        CHECK(t.fold == want);
    }
    CHECK(water >= 1);  // seed chosen so the small grid draws at least one water tile
}

TEST_CASE("corrupted tile and stats files are rejected at load") {
    TempDir dir("corrupt");
    generate_dataset(small_cfg(), dir.str());
    DatasetManifest m = load_manifest(dir.str());

    // Flip a byte in the middle of one tile payload.
    fs::path victim = dir.path / m.entries[5].coarse_file;
    auto bytes = slurp(victim);
    bytes[bytes.size() / 2] ^= 0xff;
    {
        std::ofstream out(victim, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    }
    CHECK_THROWS_AS(load_tiles(dir.str(), m), DataError);

    // Stats digest mismatch is caught too.
    auto stats_text = std::string(reinterpret_cast<const char*>(slurp(dir.path / "stats.json").data()),
                                  slurp(dir.path / "stats.json").size());
    auto pos = stats_text.find("\"chm_max\": 120.0");
    REQUIRE(pos != std::string::npos);
    stats_text.replace(pos, 16, "\"chm_max\": 999.0");
    {
        std::ofstream out(dir.path / "stats.json", std::ios::trunc);
        out << stats_text;
    }
    CHECK_THROWS_AS(load_stats(dir.str()), DataError);

    // Garbage manifest is a data error, not a crash.
    {
        std::ofstream out(dir.path / "manifest.json", std::ios::trunc);
        out << "{not json";
    }
    CHECK_THROWS_AS(load_manifest(dir.str()), DataError);
}

TEST_CASE("split_dataset reassigns folds and recomputes stats") {
    TempDir dir("split");
    generate_dataset(small_cfg(), dir.str());
    DatasetStats st2 = load_stats(dir.str());

    split_dataset(dir.str(), 3);
    DatasetManifest m = load_manifest(dir.str());
    CHECK(m.cell == 3);
    for (const auto& e : m.entries) {
        Fold want = ((e.gi / 3 + e.gj / 3) % 2 == 0) ? Fold::train : Fold::validation;
        CHECK(e.fold == want);
    }
    DatasetStats st3 = load_stats(dir.str());
    CHECK(st3.chm_max == st2.chm_max);
    // Different training fold -> different band statistics.
    CHECK(st3.digest() != st2.digest());

    // Splitting back to cell 2 restores the original stats bit for bit.
    split_dataset(dir.str(), 2);
    DatasetStats back = load_stats(dir.str());
    CHECK(back.digest() == st2.digest());

    // Every cell size keeps the fold partition disjoint and exhaustive.
    for (uint32_t cell : {1u, 2u, 3u, 5u, 6u, 7u}) {
        split_dataset(dir.str(), cell);
        DatasetManifest mm = load_manifest(dir.str());
        size_t train = 0, val = 0;
        for (const auto& e : mm.entries) (e.fold == Fold::train ? train : val) += 1;
        CHECK(train + val == 36);
        if (cell <= 3) CHECK(val > 0);
    }
}

TEST_CASE("generation summary accounts for every tile") {
    TempDir dir("summary");
    GenSummary s = generate_dataset(small_cfg(), dir.str());
    DatasetManifest m = load_manifest(dir.str());
    size_t water = 0, train = 0, val = 0;
    for (const auto& e : m.entries) {
        if (e.water) { ++water; continue; }
        (e.fold == Fold::train ? train : val) += 1;
    }
    CHECK(s.water_flagged == water);
    CHECK(s.train_kept == train - 0);  // no negative-height drops in this corpus
    CHECK(s.negative_dropped == 0);
    CHECK(s.train_kept + s.validation_kept + s.water_flagged == s.tiles);
}

TEST_CASE("config validation rejects bad band counts and tree ranges") {
    TempDir dir("badcfg");
    RunConfig bad_bands = small_cfg();
    bad_bands.set("data", "bands", "10");
    CHECK_THROWS_AS(generate_dataset(bad_bands, dir.str()), ConfigError);

    RunConfig bad_trees = small_cfg();
    bad_trees.set("data", "trees_min", "20");
    bad_trees.set("data", "trees_max", "10");
    CHECK_THROWS_AS(generate_dataset(bad_trees, dir.str()), ConfigError);
}
