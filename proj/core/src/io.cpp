#include "vsr/io.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vsr/rng.hpp"

namespace vsr {

// ---------------------------------------------------------------------------
// CRC32
// ---------------------------------------------------------------------------

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

const std::array<uint32_t, 256>& crc_table() {
    static const std::array<uint32_t, 256> t = make_crc_table();
    return t;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    const auto& tab = crc_table();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = tab[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

// ---------------------------------------------------------------------------
// Byte primitives
// ---------------------------------------------------------------------------

void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void ByteReader::require(size_t len) const {
    if (pos + len > n) throw DataError(what + ": truncated (need " + std::to_string(len) + " bytes at offset " + std::to_string(pos) + ")");
}

uint8_t ByteReader::u8() {
    require(1);
    return p[pos++];
}

uint32_t ByteReader::u32() {
    require(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
}

uint64_t ByteReader::u64() {
    require(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
}

float ByteReader::f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void ByteReader::bytes(uint8_t* dst, size_t len) {
    require(len);
    std::memcpy(dst, p + pos, len);
    pos += len;
}

// ---------------------------------------------------------------------------
// Filesystem
// ---------------------------------------------------------------------------

void write_file_atomic(const std::string& path, const uint8_t* data, size_t len) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open '" + tmp + "' for writing");
        f.write(reinterpret_cast<const char*>(data), std::streamsize(len));
        if (!f) throw DataError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("rename '" + tmp + "' -> '" + path + "' failed: " + ec.message());
}

void write_file_atomic(const std::string& path, const std::vector<uint8_t>& data) {
    write_file_atomic(path, data.data(), data.size());
}

void write_text_atomic(const std::string& path, const std::string& text) {
    write_file_atomic(path, reinterpret_cast<const uint8_t*>(text.data()), text.size());
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("cannot open '" + path + "'");
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(buf.data()), size);
    if (!f) throw DataError("read failed for '" + path + "'");
    return buf;
}

std::string read_text(const std::string& path) {
    const auto b = read_file_bytes(path);
    return std::string(b.begin(), b.end());
}

// ---------------------------------------------------------------------------
// TileFile
// ---------------------------------------------------------------------------

namespace {
constexpr char kTileMagic[4] = {'V', 'S', 'R', 'T'};
constexpr char kCkptMagic[4] = {'V', 'S', 'R', 'C'};
}  // namespace

std::vector<uint8_t> encode_tile(const Tensor& chw) {
    if (chw.ndim() != 3)
        throw DimensionError("tile: expected [C,H,W] tensor, got " + shape_str(chw.shape()));
    const uint32_t c = uint32_t(chw.dim(0)), h = uint32_t(chw.dim(1)), w = uint32_t(chw.dim(2));
    std::vector<uint8_t> out;
    out.reserve(21 + chw.numel() * 4 + 4);
    out.insert(out.end(), kTileMagic, kTileMagic + 4);
    put_u32(out, kTileVersion);
    put_u32(out, h);
    put_u32(out, w);
    put_u32(out, c);
    put_u8(out, 0);  // dtype: float32
    const size_t payload_start = out.size();
    for (size_t i = 0; i < chw.numel(); ++i) put_f32(out, chw.data()[i]);
    put_u32(out, crc32(out.data() + payload_start, out.size() - payload_start));
    return out;
}

Tensor decode_tile(const std::vector<uint8_t>& bytes, const std::string& what) {
    ByteReader r{bytes.data(), bytes.size(), 0, what};
    char magic[4];
    r.bytes(reinterpret_cast<uint8_t*>(magic), 4);
    if (std::memcmp(magic, kTileMagic, 4) != 0) throw DataError(what + ": not a tile file (bad magic)");
    const uint32_t version = r.u32();
    if (version != kTileVersion) throw DataError(what + ": unsupported tile version " + std::to_string(version));
    const uint32_t h = r.u32(), w = r.u32(), c = r.u32();
    const uint8_t dtype = r.u8();
    if (dtype != 0) throw DataError(what + ": unsupported dtype code " + std::to_string(dtype));
    const size_t count = size_t(h) * w * c;
    const size_t payload_start = r.pos;
    r.require(count * 4 + 4);
    Tensor t = Tensor::zeros({c, h, w});
    for (size_t i = 0; i < count; ++i) t.data()[i] = r.f32();
    const uint32_t stored = r.u32();
    const uint32_t actual = crc32(bytes.data() + payload_start, count * 4);
    if (stored != actual) throw DataError(what + ": payload CRC mismatch");
    if (!r.done()) throw DataError(what + ": trailing bytes after CRC");
    return t;
}

void save_tile(const std::string& path, const Tensor& chw) { write_file_atomic(path, encode_tile(chw)); }

Tensor load_tile(const std::string& path) { return decode_tile(read_file_bytes(path), path); }

// ---------------------------------------------------------------------------
// CheckpointFile
// ---------------------------------------------------------------------------

void Checkpoint::add(const std::string& name, const Tensor& t) {
    auto it = std::lower_bound(entries.begin(), entries.end(), name,
                               [](const CheckpointEntry& e, const std::string& n) { return e.name < n; });
    if (it != entries.end() && it->name == name)
        throw UsageError("checkpoint: duplicate entry '" + name + "'");
    CheckpointEntry e;
    e.name = name;
    e.shape = t.shape();
    e.values = t.values();
    entries.insert(it, std::move(e));
}

bool Checkpoint::has(const std::string& name) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const CheckpointEntry& e) { return e.name == name; });
}

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw DataError("checkpoint: missing entry '" + name + "'");
}

Tensor Checkpoint::tensor(const std::string& name) const {
    const CheckpointEntry& e = at(name);
    return Tensor::from(e.shape, e.values);
}

std::vector<uint8_t> Checkpoint::encode() const {
    // Two passes: the entry table stores absolute payload offsets.
    size_t header = 4 + 4 + 1;
    header += 4;  // metadata count
    for (const auto& kv : metadata) header += 4 + kv.first.size() + 4 + kv.second.size();
    header += 4;  // entry count
    for (const auto& e : entries) header += 4 + e.name.size() + 4 + 8 * e.shape.size() + 8;

    std::vector<uint8_t> out;
    out.reserve(header + 64);
    out.insert(out.end(), kCkptMagic, kCkptMagic + 4);
    put_u32(out, kCheckpointVersion);
    put_u8(out, frozen ? 1 : 0);
    put_u32(out, uint32_t(metadata.size()));
    for (const auto& kv : metadata) {
        put_u32(out, uint32_t(kv.first.size()));
        out.insert(out.end(), kv.first.begin(), kv.first.end());
        put_u32(out, uint32_t(kv.second.size()));
        out.insert(out.end(), kv.second.begin(), kv.second.end());
    }
    put_u32(out, uint32_t(entries.size()));
    uint64_t offset = header;
    for (const auto& e : entries) {
        put_u32(out, uint32_t(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put_u32(out, uint32_t(e.shape.size()));
        for (size_t d : e.shape) put_u64(out, d);
        put_u64(out, offset);
        offset += e.values.size() * 4;
    }
    for (const auto& e : entries)
        for (float v : e.values) put_f32(out, v);
    put_u64(out, fnv1a64(out.data(), out.size()));
    return out;
}

uint64_t Checkpoint::digest() const {
    const std::vector<uint8_t> bytes = encode();
    return fnv1a64(bytes.data(), bytes.size() - 8);
}

Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes, const std::string& what) {
    if (bytes.size() < 8) throw DataError(what + ": truncated checkpoint");
    const uint64_t stored = [&] {
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(bytes[bytes.size() - 8 + i]) << (8 * i);
        return v;
    }();
    if (stored != fnv1a64(bytes.data(), bytes.size() - 8))
        throw DataError(what + ": checkpoint digest mismatch");

    ByteReader r{bytes.data(), bytes.size() - 8, 0, what};
    char magic[4];
    r.bytes(reinterpret_cast<uint8_t*>(magic), 4);
    if (std::memcmp(magic, kCkptMagic, 4) != 0) throw DataError(what + ": not a checkpoint file (bad magic)");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError(what + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.frozen = r.u8() != 0;
    const uint32_t nmeta = r.u32();
    for (uint32_t i = 0; i < nmeta; ++i) {
        std::string k(r.u32(), '\0');
        r.bytes(reinterpret_cast<uint8_t*>(k.data()), k.size());
        std::string v(r.u32(), '\0');
        r.bytes(reinterpret_cast<uint8_t*>(v.data()), v.size());
        ck.metadata.emplace(std::move(k), std::move(v));
    }
    const uint32_t nent = r.u32();
    struct RawEntry {
        std::string name;
        Shape shape;
        uint64_t offset;
        size_t count;
    };
    std::vector<RawEntry> raw(nent);
    for (auto& e : raw) {
        e.name.assign(r.u32(), '\0');
        r.bytes(reinterpret_cast<uint8_t*>(e.name.data()), e.name.size());
        const uint32_t rank = r.u32();
        e.shape.resize(rank);
        e.count = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            e.shape[d] = size_t(r.u64());
            e.count *= e.shape[d];
        }
        e.offset = r.u64();
    }
    // Entries must be name-sorted (unique) with contiguous non-overlapping payloads.
    uint64_t expected = r.pos;
    for (size_t i = 0; i < raw.size(); ++i) {
        if (i > 0 && !(raw[i - 1].name < raw[i].name))
            throw DataError(what + ": entry names not strictly sorted ('" + raw[i].name + "')");
        if (raw[i].offset != expected)
            throw DataError(what + ": entry '" + raw[i].name + "' payload offset " +
                            std::to_string(raw[i].offset) + " != expected " + std::to_string(expected));
        expected += raw[i].count * 4;
    }
    for (auto& e : raw) {
        CheckpointEntry out;
        out.name = std::move(e.name);
        out.shape = std::move(e.shape);
        out.values.resize(e.count);
        for (size_t i = 0; i < e.count; ++i) out.values[i] = r.f32();
        ck.entries.push_back(std::move(out));
    }
    if (!r.done()) throw DataError(what + ": trailing bytes in checkpoint");
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    write_file_atomic(path, ck.encode());
}

Checkpoint load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

namespace {

struct KeySpec {
    const char* section;
    const char* key;
    const char* dflt;
};

// Single source of truth for configuration surface and defaults.
const KeySpec kKeys[] = {
    {"data", "seed", "20240601"},
    {"data", "grid_tiles", "64"},          // tiles per grid side; total = grid_tiles^2
    {"data", "source_size", "16"},         // coarse tile side (pixels)
    {"data", "bands", "12"},
    {"data", "scale", "8"},                // super-resolution factor
    {"data", "dates", "6"},                // synthetic acquisition count
    {"data", "noise_sigma", "0.02"},       // per-date band noise, reflectance units
    {"data", "cloud_rate", "0.35"},        // fraction of pixels lost per date (expected)
    {"data", "trees_min", "30"},
    {"data", "trees_max", "140"},
    {"data", "crown_kappa", "0.45"},       // crown radius per meter of height
    {"data", "height_max", "120"},
    {"data", "water_fraction", "0.04"},    // tiles synthesized as water and filtered out
    {"data", "cell", "2"},                 // checkerboard fold cell, in tiles
    {"autoencoders", "cs", "4"},
    {"autoencoders", "ct", "4"},
    {"autoencoders", "source_patch", "2"},
    {"autoencoders", "target_patch", "16"},
    {"autoencoders", "hidden", "128"},
    {"autoencoders", "steps", "3000"},
    {"autoencoders", "batch", "16"},
    {"autoencoders", "lr", "0.001"},
    {"autoencoders", "weight_decay", "0.0"},
    {"uvit", "depth", "6"},
    {"uvit", "heads", "4"},
    {"uvit", "dim", "64"},
    {"uvit", "mlp_ratio", "2"},
    {"flow", "steps", "8000"},
    {"flow", "batch", "16"},
    {"flow", "lr", "0.0001"},
    {"flow", "weight_decay", "0.01"},
    {"flow", "log_every", "50"},
    {"integrator", "method", "dopri5"},    // dopri5 | rk4
    {"integrator", "mode", "fixed"},       // fixed | adaptive
    {"integrator", "steps", "100"},
    {"integrator", "rtol", "1e-5"},
    {"integrator", "atol", "1e-6"},
    {"metrics", "mask_threshold", "2.0"},
    {"metrics", "block", "30"},            // Block-R² block side, pixels
    {"metrics", "block_mean_variant", "false"},
    {"metrics", "bin_edges", "2,5,10,15,20,30,45,60,120"},
    {"metrics", "quantiles", "0.05,0.25,0.5,0.75,0.95"},
    {"metrics", "agg_factor", "8"},        // aggregated-resolution metrics
};

const char* kSectionOrder[] = {"data", "autoencoders", "uvit", "flow", "integrator", "metrics"};

const KeySpec* find_key(const std::string& section, const std::string& key) {
    for (const auto& k : kKeys)
        if (section == k.section && key == k.key) return &k;
    return nullptr;
}

bool known_section(const std::string& section) {
    for (const char* s : kSectionOrder)
        if (section == s) return true;
    return false;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::parse_text(const std::string& text, const std::string& what) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(what + ":" + std::to_string(lineno) + ": malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            if (!known_section(section))
                throw ConfigError(what + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(what + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            throw ConfigError(what + ":" + std::to_string(lineno) + ": key '" + key + "' outside any section");
        if (!find_key(section, key))
            throw ConfigError(what + ":" + std::to_string(lineno) + ": unknown key '" + key + "' in section [" + section + "]");
        auto& sec = cfg.sections_[section];
        if (sec.count(key))
            throw ConfigError(what + ":" + std::to_string(lineno) + ": duplicate key '" + key + "' in section [" + section + "]");
        sec[key] = value;
    }
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    return parse_text(read_text(path), path);
}

bool RunConfig::has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) != 0;
}

std::string RunConfig::get_str(const std::string& section, const std::string& key) const {
    const KeySpec* spec = find_key(section, key);
    if (!spec) throw UsageError("config: unregistered key [" + section + "] " + key);
    auto s = sections_.find(section);
    if (s != sections_.end()) {
        auto k = s->second.find(key);
        if (k != s->second.end()) return k->second;
    }
    return spec->dflt;
}

int64_t RunConfig::get_int(const std::string& section, const std::string& key) const {
    const std::string v = get_str(section, key);
    try {
        size_t used = 0;
        const int64_t r = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: [" + section + "] " + key + " = '" + v + "' is not an integer");
    }
}

double RunConfig::get_double(const std::string& section, const std::string& key) const {
    const std::string v = get_str(section, key);
    try {
        size_t used = 0;
        const double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: [" + section + "] " + key + " = '" + v + "' is not a number");
    }
}

bool RunConfig::get_bool(const std::string& section, const std::string& key) const {
    const std::string v = get_str(section, key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: [" + section + "] " + key + " = '" + v + "' is not a boolean");
}

std::vector<double> RunConfig::get_list(const std::string& section, const std::string& key) const {
    const std::string v = get_str(section, key);
    std::vector<double> out;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) {
        const std::string t = trim(item);
        if (t.empty()) continue;
        try {
            size_t used = 0;
            out.push_back(std::stod(t, &used));
            if (used != t.size()) throw std::invalid_argument(t);
        } catch (const std::exception&) {
            throw ConfigError("config: [" + section + "] " + key + ": '" + t + "' is not a number");
        }
    }
    if (out.empty()) throw ConfigError("config: [" + section + "] " + key + " is an empty list");
    return out;
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
    if (!find_key(section, key)) throw UsageError("config: unregistered key [" + section + "] " + key);
    sections_[section][key] = value;
}

std::string RunConfig::resolved_text() const {
    std::ostringstream out;
    for (const char* sec : kSectionOrder) {
        out << "[" << sec << "]\n";
        for (const auto& k : kKeys)
            if (std::string(k.section) == sec) out << k.key << " = " << get_str(sec, k.key) << "\n";
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

CsvWriter::CsvWriter(std::string path, std::vector<std::string> header)
    : path_(std::move(path)), ncols_(header.size()) {
    if (header.empty()) throw UsageError("csv: header row is mandatory");
    for (size_t i = 0; i < header.size(); ++i) buf_ += (i ? "," : "") + header[i];
    buf_ += "\n";
    dirty_ = true;
}

CsvWriter::~CsvWriter() {
    try {
        flush();
    } catch (...) {
        // destructor must not throw; an explicit flush() reports failures
    }
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != ncols_)
        throw UsageError("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                         std::to_string(ncols_));
    for (size_t i = 0; i < cells.size(); ++i) buf_ += (i ? "," : "") + cells[i];
    buf_ += "\n";
    dirty_ = true;
}

void CsvWriter::flush() {
    if (!dirty_) return;
    write_text_atomic(path_, buf_);
    dirty_ = false;
}

std::string csv_num(double v) {
    // Shortest decimal string that parses back exactly.
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::stod(buf) == v) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

void write_pgm16(const std::string& path, const float* values, size_t h, size_t w, float vmin, float vmax) {
    if (!(vmax > vmin)) throw UsageError("pgm: vmax must exceed vmin");
    std::string head = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
    std::vector<uint8_t> out(head.begin(), head.end());
    out.reserve(out.size() + h * w * 2);
    const float scale = 65535.0f / (vmax - vmin);
    for (size_t i = 0; i < h * w; ++i) {
        float x = (values[i] - vmin) * scale;
        x = std::min(std::max(x, 0.0f), 65535.0f);
        const uint16_t q = uint16_t(std::lround(x));
        out.push_back(uint8_t(q >> 8));  // 16-bit PGM samples are big-endian
        out.push_back(uint8_t(q & 0xFF));
    }
    write_file_atomic(path, out);
}

}  // namespace vsr
