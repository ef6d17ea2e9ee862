#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

#include "sti/quantizer.hpp"
#include "sti/types.hpp"

// Bit-exact on-disk format for the N x M x K shard tree. One file per shard
// version; files of one layer live in one directory for access locality.
//
// Layout, all little-endian:
//   magic "STI1" (4) | version u16 | layer u16 | slice u16 | bitwidth u16 |
//   six (rows u32, cols u32) dimension pairs (48) |
//   centroid_count u32 | outlier_count u32 | payload_len u64 |
//   total_weights u64 | outlier_fraction f64
//   -> 92 header bytes, then centroids (4 each), outliers (u32 offset +
//      f32 value = 8 each), payload.
//
// payload_len is ceil(weights*k/8) for compressed shards, 4*weights raw
// bytes for k=32; centroid_count is 2^k, or 0 for k=32.

namespace sti {

constexpr char kShardMagic[4] = {'S', 'T', 'I', '1'};
constexpr std::uint16_t kShardFormatVersion = 1;
constexpr std::size_t kShardHeaderBytes = 92;

struct ShardFileHeader {
    std::uint16_t version = kShardFormatVersion;
    std::uint16_t layer = 0;
    std::uint16_t slice = 0;
    std::uint16_t bitwidth = 0;
    ShardShape shape{};
    std::uint32_t centroid_count = 0;
    std::uint32_t outlier_count = 0;
    std::uint64_t payload_len = 0;
    std::uint64_t total_weights = 0;
    double outlier_fraction = 0.0;
};

// size = 92 + 4*centroid_count + 8*outlier_count + payload_len
std::uint64_t shard_file_size(const ShardFileHeader& h);
std::uint64_t shard_file_size(const QuantizedShard& q);

// shard_dir/layer{L:02}/s{S:02}_k{K:02}.shard
std::filesystem::path shard_path(const ModelManifest& manifest, ShardId id, int bitwidth);
std::filesystem::path shard_rel_path(ShardId id, int bitwidth);

std::filesystem::path write_shard(const QuantizedShard& q, const std::filesystem::path& dir);
QuantizedShard read_shard(const std::filesystem::path& file);

// Header-only probe used by manifest validation.
bool check_shard_header(const std::filesystem::path& file, const ModelManifest& manifest, ShardId id,
                        int bitwidth, std::string* why = nullptr);

struct LayerLoadRequest {
    int layer = 0;
    std::vector<std::pair<int, int>> slices;  // (slice, bitwidth)
    std::set<ShardId> skip;                   // already preloaded
};

struct LayerLoadResult {
    std::vector<QuantizedShard> shards;  // slice order
    std::uint64_t bytes_read = 0;
};

// Loads one layer's selected shard versions as one sequential pass in
// ascending path order, independent of request list order. Skipped entries
// are never opened.
LayerLoadResult read_layer(const ModelManifest& manifest, const LayerLoadRequest& req);

struct IoMeasurement {
    double mean_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
    std::vector<double> samples_ms;
    std::uint64_t bytes_per_trial = 0;
    bool cache_bypassed = false;  // O_DIRECT reads; else fadvise(DONTNEED) fallback
    bool cache_polluted = false;  // later trials suspiciously faster than the first
};

struct IoMeasureOptions {
    int trials = 3;
    bool bypass_cache = true;
};

// Wall-clock per-trial statistics for read_layer. With bypass off, page-cache
// effects are flagged rather than hidden.
IoMeasurement measure_layer_io(const ModelManifest& manifest, const LayerLoadRequest& req,
                               const IoMeasureOptions& opts = {});

// Flagging rule, exposed for tests: without bypass, a minimum under half the
// first sample means the cache took over.
bool classify_cache_polluted(const std::vector<double>& samples_ms, bool bypassed);

}  // namespace sti
