#include "sti/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace sti {

const std::array<const char*, kShardMatrixCount> kShardMatrixNames = {
    "W_Q", "W_K", "W_V", "W_O", "W_FFN1", "W_FFN2"};

std::size_t RawShard::weight_count() const {
    std::size_t total = 0;
    for (const auto& m : matrices) total += m.size();
    return total;
}

std::vector<float> RawShard::flat() const {
    std::vector<float> out;
    out.reserve(weight_count());
    for (const auto& m : matrices) out.insert(out.end(), m.data.begin(), m.data.end());
    return out;
}

float RawShard::at_flat(std::size_t offset) const {
    for (const auto& m : matrices) {
        if (offset < m.size()) return m.data[offset];
        offset -= m.size();
    }
    throw Error("flat offset out of range");
}

ShardShape shape_of(const RawShard& shard) {
    ShardShape s;
    for (int i = 0; i < kShardMatrixCount; ++i)
        s[i] = {shard.matrices[i].rows, shard.matrices[i].cols};
    return s;
}

ShardShape shard_shape_for(const ModelManifest& m) {
    const auto d = static_cast<std::uint32_t>(m.hidden_dim);
    const auto dh = static_cast<std::uint32_t>(m.head_dim());
    const auto df = static_cast<std::uint32_t>(m.ffn_slice());
    return {{{d, dh}, {d, dh}, {d, dh}, {d, dh}, {df, d}, {d, df}}};
}

std::size_t weight_count(const ShardShape& shape) {
    std::size_t total = 0;
    for (auto [r, c] : shape) total += static_cast<std::size_t>(r) * c;
    return total;
}

double GaussianFit::log_pdf(double x) const {
    const double z = (x - mean) / std;
    return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(std) - 0.5 * z * z;
}

GaussianFit fit_gaussian(std::span<const float> weights, double threshold) {
    if (weights.size() < 2) throw Error("fit_gaussian needs at least 2 samples");
    double sum = 0.0;
    for (float w : weights) {
        if (!std::isfinite(w)) throw Error("non-finite weight");
        sum += w;
    }
    const double mean = sum / static_cast<double>(weights.size());
    double sq = 0.0;
    for (float w : weights) {
        const double d = w - mean;
        sq += d * d;
    }
    const double var = sq / static_cast<double>(weights.size());
    if (var <= 0.0) throw DegenerateDistributionError("zero variance");
    return {mean, std::sqrt(var), threshold};
}

OutlierSplit split_outliers(std::span<const float> weights, const GaussianFit& fit) {
    if (!(fit.std > 0.0)) throw DegenerateDistributionError("degenerate fit");
    OutlierSplit split;
    for (std::uint32_t i = 0; i < weights.size(); ++i) {
        if (fit.is_outlier(weights[i]))
            split.outlier_offsets.push_back(i);
        else
            split.inlier_offsets.push_back(i);
    }
    return split;
}

std::vector<std::uint8_t> pack_indexes(std::span<const std::uint32_t> indexes, int bitwidth) {
    const std::size_t total_bits = indexes.size() * static_cast<std::size_t>(bitwidth);
    std::vector<std::uint8_t> bytes((total_bits + 7) / 8, 0);
    std::size_t bit = 0;
    for (std::uint32_t idx : indexes) {
        for (int b = 0; b < bitwidth; ++b, ++bit) {
            if (idx >> b & 1u) bytes[bit >> 3] |= static_cast<std::uint8_t>(1u << (bit & 7));
        }
    }
    return bytes;
}

std::vector<std::uint32_t> unpack_indexes(std::span<const std::uint8_t> bytes, std::size_t count,
                                          int bitwidth) {
    if (bytes.size() < (count * bitwidth + 7) / 8) throw CorruptShardError("payload too short");
    std::vector<std::uint32_t> out(count, 0);
    std::size_t bit = 0;
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t v = 0;
        for (int b = 0; b < bitwidth; ++b, ++bit) {
            if (bytes[bit >> 3] >> (bit & 7) & 1u) v |= 1u << b;
        }
        out[i] = v;
    }
    return out;
}

namespace {

QuantizedShard passthrough_encode(const RawShard& raw) {
    QuantizedShard q;
    q.id = raw.id;
    q.bitwidth = kFullFidelityBits;
    q.shape = shape_of(raw);
    auto flat = raw.flat();
    q.payload.resize(flat.size() * sizeof(float));
    std::memcpy(q.payload.data(), flat.data(), q.payload.size());
    return q;
}

}  // namespace

std::vector<QuantizedShard> quantize_layer(std::span<const RawShard> shards, int bitwidth,
                                           const GaussianFit* fit) {
    if (shards.empty()) return {};
    if (bitwidth == kFullFidelityBits) {
        std::vector<QuantizedShard> out;
        out.reserve(shards.size());
        for (const auto& s : shards) out.push_back(passthrough_encode(s));
        return out;
    }
    if (bitwidth < 1 || bitwidth > 16) throw Error("bitwidth must be 1..16 or 32");

    const std::size_t shard_weights = shards[0].weight_count();
    for (const auto& s : shards)
        if (s.weight_count() != shard_weights) throw ShapeError("shards of one layer differ in size");

    if (shard_weights * shards.size() > 0xFFFFFFFFull) throw Error("layer too large for u32 offsets");

    std::vector<float> layer_flat;
    layer_flat.reserve(shard_weights * shards.size());
    for (const auto& s : shards) {
        auto f = s.flat();
        layer_flat.insert(layer_flat.end(), f.begin(), f.end());
    }

    GaussianFit layer_fit = fit ? *fit : fit_gaussian(layer_flat);

    std::vector<std::uint8_t> outlier_flag(layer_flat.size(), 0);
    std::size_t n_outliers = 0;
    for (std::size_t i = 0; i < layer_flat.size(); ++i) {
        if (layer_fit.is_outlier(layer_flat[i])) {
            outlier_flag[i] = 1;
            ++n_outliers;
        }
    }
    const std::size_t n_inliers = layer_flat.size() - n_outliers;
    const std::size_t n_clusters = std::size_t{1} << bitwidth;
    if (n_inliers < n_clusters)
        throw InsufficientMassError("fewer inliers (" + std::to_string(n_inliers) + ") than 2^k (" +
                                    std::to_string(n_clusters) + ")");

    // Sort inliers by (value, original offset); the offset tiebreak makes the
    // encoding deterministic for equal weights.
    std::vector<std::uint32_t> sorted_inliers;
    sorted_inliers.reserve(n_inliers);
    for (std::uint32_t i = 0; i < layer_flat.size(); ++i)
        if (!outlier_flag[i]) sorted_inliers.push_back(i);
    std::sort(sorted_inliers.begin(), sorted_inliers.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (layer_flat[a] != layer_flat[b]) return layer_flat[a] < layer_flat[b];
        return a < b;
    });

    // Equal-population clusters; the first (count mod 2^k) get the extra
    // element, so sizes differ by at most 1 with larger clusters first.
    const std::size_t base = n_inliers / n_clusters;
    const std::size_t rem = n_inliers % n_clusters;
    std::vector<float> centroids(n_clusters);
    std::vector<std::uint32_t> cluster_of(layer_flat.size(), 0);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < n_clusters; ++c) {
        const std::size_t len = base + (c < rem ? 1 : 0);
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const std::uint32_t off = sorted_inliers[pos + i];
            acc += layer_flat[off];
            cluster_of[off] = static_cast<std::uint32_t>(c);
        }
        centroids[c] = static_cast<float>(acc / static_cast<double>(len));
        pos += len;
    }

    std::vector<QuantizedShard> out;
    out.reserve(shards.size());
    for (std::size_t s = 0; s < shards.size(); ++s) {
        QuantizedShard q;
        q.id = shards[s].id;
        q.bitwidth = bitwidth;
        q.shape = shape_of(shards[s]);
        q.centroids = centroids;
        std::vector<std::uint32_t> indexes(shard_weights, 0);
        const std::size_t layer_base = s * shard_weights;
        for (std::size_t i = 0; i < shard_weights; ++i) {
            const std::size_t off = layer_base + i;
            if (outlier_flag[off]) {
                // Outlier index slots stay 0 for reproducible bytes; the
                // (offset, value) pair is what decode uses.
                q.outliers.push_back({static_cast<std::uint32_t>(i), layer_flat[off]});
            } else {
                indexes[i] = cluster_of[off];
            }
        }
        q.payload = pack_indexes(indexes, bitwidth);
        out.push_back(std::move(q));
    }
    return out;
}

QuantizedShard quantize_shard(const RawShard& raw, int bitwidth, const GaussianFit* fit) {
    auto v = quantize_layer(std::span(&raw, 1), bitwidth, fit);
    return std::move(v.at(0));
}

RawShard decode_shard(const QuantizedShard& q) {
    RawShard out;
    out.id = q.id;
    const std::size_t total = q.weight_count();
    std::vector<float> flat(total);

    if (q.bitwidth == kFullFidelityBits) {
        if (q.payload.size() != total * sizeof(float))
            throw CorruptShardError("raw payload length mismatch");
        std::memcpy(flat.data(), q.payload.data(), q.payload.size());
    } else {
        auto indexes = unpack_indexes(q.payload, total, q.bitwidth);
        for (std::size_t i = 0; i < total; ++i) {
            if (indexes[i] >= q.centroids.size())
                throw CorruptShardError("index " + std::to_string(indexes[i]) +
                                        " beyond centroid table");
            flat[i] = q.centroids[indexes[i]];
        }
        for (const auto& o : q.outliers) {
            if (o.offset >= total) throw CorruptShardError("outlier offset beyond shard");
            flat[o.offset] = o.value;
        }
    }

    std::size_t off = 0;
    for (int i = 0; i < kShardMatrixCount; ++i) {
        Matrix& m = out.matrices[i];
        m.rows = q.shape[i].first;
        m.cols = q.shape[i].second;
        m.data.assign(flat.begin() + off, flat.begin() + off + m.size());
        off += m.size();
    }
    return out;
}

double reconstruction_rmse(const RawShard& a, const RawShard& b) {
    double acc = 0.0;
    std::size_t n = 0;
    for (int i = 0; i < kShardMatrixCount; ++i) {
        const auto& ma = a.matrices[i];
        const auto& mb = b.matrices[i];
        if (ma.size() != mb.size()) throw ShapeError("rmse on mismatched shards");
        for (std::size_t j = 0; j < ma.size(); ++j) {
            const double d = static_cast<double>(ma.data[j]) - mb.data[j];
            acc += d * d;
        }
        n += ma.size();
    }
    return n ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
}

}  // namespace sti
