#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Core domain types shared by every module: shard identity, model geometry,
// hardware profiles, importance maps, plans and AIB ledgers.
//
// All durations are integer microseconds internally so ledger arithmetic is
// exact; external JSON carries fractional milliseconds.

namespace sti {

using Micros = std::int64_t;

constexpr Micros ms_to_us(double ms) {
    return static_cast<Micros>(ms * 1000.0 + (ms >= 0 ? 0.5 : -0.5));
}
constexpr double us_to_ms(Micros us) { return static_cast<double>(us) / 1000.0; }

// Bitwidth 32 shares the enum space with compressed widths; decode of a
// 32-bit shard is a raw copy.
constexpr int kFullFidelityBits = 32;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class MissingShardError : public Error {
public:
    using Error::Error;
};

class CorruptShardError : public Error {
public:
    using Error::Error;
};

class ProfileIncompleteError : public Error {
public:
    using Error::Error;
};

class DegenerateDistributionError : public Error {
public:
    using Error::Error;
};

class InsufficientMassError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Identity

struct ShardId {
    int layer = 0;  // 0..N-1
    int slice = 0;  // 0..M-1

    auto operator<=>(const ShardId&) const = default;
};

struct ShardVersion {
    ShardId id;
    int bitwidth = 0;

    auto operator<=>(const ShardVersion&) const = default;
};

// An n x m submodel: bottom n layers, m slices per layer, same m everywhere.
struct SubmodelShape {
    int depth = 0;  // n
    int width = 0;  // m

    int positions() const { return depth * width; }
    bool contains(ShardId id) const { return id.layer < depth && id.slice < width; }
    bool operator==(const SubmodelShape&) const = default;
};

// Planner preference: more shards first, then deeper. Total order completed
// by width so sorting is well-defined for equal (n*m, n).
inline bool shape_preferred(const SubmodelShape& a, const SubmodelShape& b) {
    if (a.positions() != b.positions()) return a.positions() > b.positions();
    if (a.depth != b.depth) return a.depth > b.depth;
    return a.width > b.width;
}

// ---------------------------------------------------------------------------
// Manifest

struct ModelManifest {
    int n_layers = 0;             // N
    int n_slices = 0;             // M (attention heads / vertical slices)
    std::vector<int> bitwidths;   // ascending; 32 = uncompressed
    int hidden_dim = 0;           // d
    int ffn_dim = 0;              // d_ff
    std::string task_id;
    std::string shard_dir;        // as stored; resolve against base_dir
    std::uint64_t layer_misc_bytes = 0;  // layernorm/bias bytes kept resident

    // Set by load_manifest to the manifest file's directory; not serialized.
    std::filesystem::path base_dir;

    int head_dim() const { return n_slices > 0 ? hidden_dim / n_slices : 0; }
    int ffn_slice() const { return n_slices > 0 ? ffn_dim / n_slices : 0; }
    std::filesystem::path root() const { return base_dir / shard_dir; }

    // Weights in one shard: Q,K,V,O are d x d/M, FFN1 is d_ff/M x d,
    // FFN2 is d x d_ff/M.
    std::uint64_t shard_weight_count() const {
        return 4ull * hidden_dim * head_dim() + 2ull * ffn_slice() * hidden_dim;
    }
    std::uint64_t layer_weight_count() const { return shard_weight_count() * n_slices; }
};

enum class ViolationKind {
    MissingShard,
    CorruptShard,
    NonIntegralHeadSize,
    NonIntegralFfnSlice,
    BadBitwidths,
    BadGeometry,
};

struct Violation {
    ViolationKind kind;
    ShardId id{};       // for shard-scoped violations
    int bitwidth = 0;   // for shard-scoped violations
    std::string detail;
};

std::string to_string(const Violation& v);

// Empty result iff all manifest invariants hold and every (layer, slice, k)
// shard file exists with a well-formed header. An unreadable directory is an
// IoError, not a validation failure.
std::vector<Violation> validate_manifest(const ModelManifest& manifest);

// Geometry/bitwidth checks only; no filesystem access.
std::vector<Violation> validate_manifest_fields(const ModelManifest& manifest);

// ---------------------------------------------------------------------------
// Hardware profile

struct ComputeKey {
    int input_len = 0;   // l
    int width = 0;       // m
    std::string freq;    // operating-point tag, default "peak"

    auto operator<=>(const ComputeKey&) const = default;
};

struct HardwareProfile {
    std::map<int, Micros> io_delay;              // k -> per-shard load time
    std::map<ComputeKey, Micros> compute_delay;  // (l, m, freq) -> layer time
    std::vector<std::string> freq_tags{"peak"};
    std::map<int, std::vector<double>> io_samples_ms;  // raw samples per k

    Micros io(int bitwidth) const;
    Micros compute(int input_len, int width, const std::string& freq) const;
    bool has_compute(int input_len, int width, const std::string& freq) const;

    // io_delay strictly increasing among compressed widths, io(32) above the
    // widest compressed; compute non-decreasing in m per (l, freq).
    std::vector<std::string> check_monotonicity() const;
};

// ---------------------------------------------------------------------------
// Importance

struct ImportanceMap {
    std::map<ShardId, double> score;  // higher = more important
    double baseline_metric = 0.0;
    std::string metric_name;
    std::string evaluator_id;
    std::uint64_t seed = 0;

    double at(ShardId id) const;
    // Every shard of the manifest scored exactly once, all finite.
    bool covers(const ModelManifest& manifest, std::string* why = nullptr) const;
};

// ---------------------------------------------------------------------------
// Plans

// Per-layer Accumulated IO Budget. budgets[0] starts at 0 plus any preload
// bonus before the first debit: loading at layer 0 is a compulsory stall.
struct AibLedger {
    std::vector<Micros> budgets;

    bool valid() const {
        for (Micros b : budgets)
            if (b < 0) return false;
        return true;
    }
};

struct PreloadedShard {
    ShardVersion shard;
    std::uint64_t bytes = 0;  // encoded file size, the |S| accounting unit

    auto operator<=>(const PreloadedShard&) const = default;
};

struct ExecutionPlan {
    SubmodelShape shape;
    // bitwidth per (layer < depth, slice < width), row-major layer*width+slice.
    std::vector<int> assignment;
    // Positions satisfied from the preload buffer; bitwidth always equals the
    // assignment at that position.
    std::vector<ShardVersion> preloaded;
    AibLedger ledger;          // final post-allocation state
    Micros target_latency = 0; // T
    int input_len = 0;         // l
    std::string freq = "peak";
    bool degraded = false;
    std::string profile_hash;
    std::string importance_hash;
    std::string manifest_hash;

    int at(int layer, int slice) const { return assignment[layer * shape.width + slice]; }
    int& at(int layer, int slice) { return assignment[layer * shape.width + slice]; }
    bool is_preloaded(ShardId id) const;
};

// Structural invariants: full assignment, preloads inside shape matching the
// assignment, non-negative ledger unless degraded.
std::vector<std::string> validate_plan(const ExecutionPlan& plan);

// ---------------------------------------------------------------------------
// JSON (nlohmann) serialization; round-trip identity is golden-file tested.

std::string to_json_string(const ModelManifest&);
std::string to_json_string(const HardwareProfile&);
std::string to_json_string(const ImportanceMap&);
std::string to_json_string(const ExecutionPlan&);

ModelManifest manifest_from_json(const std::string& text);
HardwareProfile profile_from_json(const std::string& text);
ImportanceMap importance_from_json(const std::string& text);
ExecutionPlan plan_from_json(const std::string& text);

ModelManifest load_manifest(const std::filesystem::path& file);
void save_manifest(const ModelManifest&, const std::filesystem::path& file);
HardwareProfile load_profile(const std::filesystem::path& file);
void save_profile(const HardwareProfile&, const std::filesystem::path& file);
ImportanceMap load_importance(const std::filesystem::path& file);
void save_importance(const ImportanceMap&, const std::filesystem::path& file);
ExecutionPlan load_plan(const std::filesystem::path& file);
void save_plan(const ExecutionPlan&, const std::filesystem::path& file);

// FNV-1a over file bytes, "fnv1a:<hex>"; used for plan provenance and the
// content-addressed plan cache.
std::string hash_file(const std::filesystem::path& file);
std::string hash_bytes(const void* data, std::size_t len);

std::string read_text_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file, const std::string& text);

}  // namespace sti
