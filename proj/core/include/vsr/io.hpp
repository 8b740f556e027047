#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vsr/errors.hpp"
#include "vsr/tensor.hpp"

namespace vsr {

// CRC-32 (reflected, poly 0xEDB88320, init/xorout 0xFFFFFFFF).
uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);
inline uint32_t crc32(const std::vector<uint8_t>& v) { return crc32(v.data(), v.size()); }

// --- little-endian byte building blocks -----------------------------------

void put_u8(std::vector<uint8_t>& out, uint8_t v);
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_u64(std::vector<uint8_t>& out, uint64_t v);
void put_f32(std::vector<uint8_t>& out, float v);

// Cursor-based reader that throws DataError on truncation.
struct ByteReader {
    const uint8_t* p;
    size_t n;
    size_t pos = 0;
    std::string what;  // used in error messages

    uint8_t u8();
    uint32_t u32();
    uint64_t u64();
    float f32();
    void bytes(uint8_t* dst, size_t len);
    void require(size_t len) const;
    bool done() const { return pos == n; }
};

// --- filesystem helpers ----------------------------------------------------

// Writes via a temp file in the same directory, then renames into place.
void write_file_atomic(const std::string& path, const uint8_t* data, size_t len);
void write_file_atomic(const std::string& path, const std::vector<uint8_t>& data);
void write_text_atomic(const std::string& path, const std::string& text);
std::vector<uint8_t> read_file_bytes(const std::string& path);
std::string read_text(const std::string& path);

// --- TileFile ---------------------------------------------------------------
// magic "VSRT" | version u32 | H u32 | W u32 | C u32 | dtype u8 (0 = f32)
// | payload: C*H*W float32 LE, channel-major then row-major | crc32(payload)

constexpr uint32_t kTileVersion = 1;

std::vector<uint8_t> encode_tile(const Tensor& chw);
Tensor decode_tile(const std::vector<uint8_t>& bytes, const std::string& what);
void save_tile(const std::string& path, const Tensor& chw);
Tensor load_tile(const std::string& path);  // returns shape [C,H,W]

// --- CheckpointFile ---------------------------------------------------------
// magic "VSRC" | version u32 | frozen u8 | metadata (count + key/value strings)
// | entry table (count; per entry: name, rank, dims, payload offset)
// | payloads f32 LE | whole-file digest u64 (FNV-1a over all preceding bytes)

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    bool frozen = false;
    std::map<std::string, std::string> metadata;   // sorted => deterministic bytes
    std::vector<CheckpointEntry> entries;          // kept sorted by name

    void add(const std::string& name, const Tensor& t);
    const CheckpointEntry& at(const std::string& name) const;
    bool has(const std::string& name) const;
    Tensor tensor(const std::string& name) const;

    std::vector<uint8_t> encode() const;
    // Digest of the canonical serialization minus the digest field itself.
    uint64_t digest() const;
};

Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes, const std::string& what);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// --- RunConfig ---------------------------------------------------------------
// INI-style sections with key=value lines; '#'/';' comments. Only the sections
// data/autoencoders/uvit/flow/integrator/metrics and their registered keys are
// accepted; anything else is a configuration error.

class RunConfig {
public:
    RunConfig() = default;
    static RunConfig parse_text(const std::string& text, const std::string& what);
    static RunConfig parse_file(const std::string& path);

    // Getters fall back to the registered default for the key; asking for an
    // unregistered key is a usage error.
    bool has(const std::string& section, const std::string& key) const;
    std::string get_str(const std::string& section, const std::string& key) const;
    int64_t get_int(const std::string& section, const std::string& key) const;
    double get_double(const std::string& section, const std::string& key) const;
    bool get_bool(const std::string& section, const std::string& key) const;
    std::vector<double> get_list(const std::string& section, const std::string& key) const;

    void set(const std::string& section, const std::string& key, const std::string& value);

    // Full dump of every known key with its resolved (explicit-or-default)
    // value; written next to run outputs for provenance.
    std::string resolved_text() const;

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

// --- CSV ----------------------------------------------------------------------

// Buffered CSV with a mandatory header row; the file appears atomically on
// flush()/destruction.
class CsvWriter {
public:
    CsvWriter(std::string path, std::vector<std::string> header);
    ~CsvWriter();
    void row(const std::vector<std::string>& cells);
    void flush();

private:
    std::string path_;
    size_t ncols_;
    std::string buf_;
    bool dirty_ = false;
};

std::string csv_num(double v);  // shortest round-trip formatting

// --- PGM ------------------------------------------------------------------------

// 16-bit P5 grayscale; values are linearly mapped from [vmin, vmax] and the
// sample bytes are stored big-endian as the format requires.
void write_pgm16(const std::string& path, const float* values, size_t h, size_t w, float vmin, float vmax);

}  // namespace vsr
