#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sti/types.hpp"

// Gaussian outlier-aware codebook quantization of per-shard weight matrices
// into k-bit index form, and exact decompression.
//
// The Gaussian is fitted once per layer over all its weights and the
// resulting codebook is shared by that layer's M shards; quantize_shard is
// the single-shard special case.

namespace sti {

struct Matrix {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> data;  // row-major

    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Fixed matrix order for flattening: W_Q, W_K, W_V, W_O, W_FFN1, W_FFN2.
constexpr int kShardMatrixCount = 6;
extern const std::array<const char*, kShardMatrixCount> kShardMatrixNames;

struct RawShard {
    ShardId id;
    std::array<Matrix, kShardMatrixCount> matrices;  // Q,K,V,O: d x d/M; FFN1: d_ff/M x d; FFN2: d x d_ff/M

    std::size_t weight_count() const;
    // Concatenation of the six matrices, row-major, in fixed order.
    std::vector<float> flat() const;
    float at_flat(std::size_t offset) const;
};

// Dimension pairs of the six matrices, as stored in the shard header.
using ShardShape = std::array<std::pair<std::uint32_t, std::uint32_t>, kShardMatrixCount>;

ShardShape shape_of(const RawShard& shard);
ShardShape shard_shape_for(const ModelManifest& manifest);
std::size_t weight_count(const ShardShape& shape);

struct GaussianFit {
    double mean = 0.0;
    double std = 0.0;  // population (maximum-likelihood) estimate, > 0
    double log_density_threshold = -4.0;

    double log_pdf(double x) const;
    bool is_outlier(double x) const { return log_pdf(x) < log_density_threshold; }
};

struct OutlierEntry {
    std::uint32_t offset = 0;  // shard-flat
    float value = 0.0f;

    bool operator==(const OutlierEntry&) const = default;
};

struct QuantizedShard {
    ShardId id;
    int bitwidth = 0;
    ShardShape shape{};
    std::vector<float> centroids;        // 2^k, ascending; empty for k=32
    std::vector<OutlierEntry> outliers;  // offsets strictly increasing; empty for k=32
    std::vector<std::uint8_t> payload;   // packed k-bit indexes, or raw FP32 bytes for k=32

    std::size_t weight_count() const { return sti::weight_count(shape); }
    double outlier_fraction() const {
        return weight_count() ? static_cast<double>(outliers.size()) / weight_count() : 0.0;
    }
    bool operator==(const QuantizedShard&) const = default;
};

// Maximum-likelihood mean/std. Throws DegenerateDistributionError when the
// input has zero variance, Error when shorter than 2 samples.
GaussianFit fit_gaussian(std::span<const float> weights, double threshold = -4.0);

struct OutlierSplit {
    std::vector<std::uint32_t> inlier_offsets;   // sorted ascending
    std::vector<std::uint32_t> outlier_offsets;  // sorted ascending
};

// Offset w is an outlier iff ln N(w; mean, std^2) < threshold. Exhaustive,
// disjoint partition.
OutlierSplit split_outliers(std::span<const float> weights, const GaussianFit& fit);

// Quantize all M shards of one layer against a shared layer-level codebook.
// The layer flat array is the concatenation of the shards' flat arrays in
// slice order. A null fit means: fit on this layer's weights.
std::vector<QuantizedShard> quantize_layer(std::span<const RawShard> shards, int bitwidth,
                                           const GaussianFit* fit = nullptr);

// Single-shard convenience: the layer is the shard itself.
QuantizedShard quantize_shard(const RawShard& raw, int bitwidth, const GaussianFit* fit = nullptr);

// Exact inverse: non-outliers become their centroid, outliers their original
// value, k=32 a raw copy. Throws CorruptShardError on an index beyond the
// centroid table.
RawShard decode_shard(const QuantizedShard& q);

// k-bit little-endian bit packing, LSB first within each byte.
std::vector<std::uint8_t> pack_indexes(std::span<const std::uint32_t> indexes, int bitwidth);
std::vector<std::uint32_t> unpack_indexes(std::span<const std::uint8_t> bytes, std::size_t count,
                                          int bitwidth);

double reconstruction_rmse(const RawShard& a, const RawShard& b);

}  // namespace sti
