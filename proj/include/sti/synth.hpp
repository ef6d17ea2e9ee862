#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sti/quantizer.hpp"
#include "sti/types.hpp"

// Seeded synthetic model generation: a full N x M raw FP32 model whose shard
// weights are Gaussian, optionally with heterogeneous per-shard scales so
// shards genuinely differ in how much fidelity matters.

namespace sti {

struct SynthSpec {
    int n_layers = 4;
    int n_slices = 4;
    int hidden_dim = 64;
    int ffn_dim = 128;
    std::uint64_t seed = 1;
    double base_scale = 0.1;
    // 0 = every shard at base_scale; otherwise per-shard scale is
    // base_scale * exp(N(0, spread^2)).
    double scale_spread = 0.0;
    std::string task_id = "synthetic";
};

struct RawModel {
    SynthSpec spec;
    std::vector<std::vector<RawShard>> layers;  // [layer][slice]
};

RawModel generate_model(const SynthSpec& spec);

// Quantize every layer at every bitwidth and write the full shard tree plus
// manifest.json under out_dir. Deterministic for the same spec; a failed run
// removes the partial tree.
ModelManifest build_shard_tree(const RawModel& model, const std::vector<int>& bitwidths,
                               const std::filesystem::path& out_dir);

// Raw FP32 weight file layout (documented in the README): magic "STIW",
// u32 n_layers, n_slices, hidden_dim, ffn_dim, then for each layer, slice:
// the six matrices in fixed order, row-major little-endian FP32.
void save_raw_model(const RawModel& model, const std::filesystem::path& file);
RawModel load_raw_model(const std::filesystem::path& file);

}  // namespace sti
