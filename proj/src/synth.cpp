#include "sti/synth.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

#include "sti/shard_store.hpp"

namespace sti {

namespace {

Matrix random_matrix(std::uint32_t rows, std::uint32_t cols, float scale, std::mt19937_64& rng) {
    Matrix m{rows, cols, {}};
    m.data.resize(m.size());
    std::normal_distribution<float> dist(0.0f, scale);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

ModelManifest manifest_for(const SynthSpec& spec, const std::vector<int>& bitwidths) {
    ModelManifest m;
    m.n_layers = spec.n_layers;
    m.n_slices = spec.n_slices;
    m.bitwidths = bitwidths;
    m.hidden_dim = spec.hidden_dim;
    m.ffn_dim = spec.ffn_dim;
    m.task_id = spec.task_id;
    m.shard_dir = ".";
    // layernorm gain/bias pairs for the two norms, FP32
    m.layer_misc_bytes = 4ull * spec.hidden_dim * 4;
    return m;
}

}  // namespace

RawModel generate_model(const SynthSpec& spec) {
    if (spec.hidden_dim % spec.n_slices != 0 || spec.ffn_dim % spec.n_slices != 0)
        throw Error("n_slices must divide hidden_dim and ffn_dim");
    RawModel model;
    model.spec = spec;
    const auto d = static_cast<std::uint32_t>(spec.hidden_dim);
    const auto dh = static_cast<std::uint32_t>(spec.hidden_dim / spec.n_slices);
    const auto df = static_cast<std::uint32_t>(spec.ffn_dim / spec.n_slices);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> spread(0.0, spec.scale_spread);

    model.layers.resize(spec.n_layers);
    for (int layer = 0; layer < spec.n_layers; ++layer) {
        for (int slice = 0; slice < spec.n_slices; ++slice) {
            const float scale = static_cast<float>(
                spec.scale_spread > 0.0 ? spec.base_scale * std::exp(spread(rng)) : spec.base_scale);
            RawShard shard;
            shard.id = {layer, slice};
            shard.matrices[0] = random_matrix(d, dh, scale, rng);
            shard.matrices[1] = random_matrix(d, dh, scale, rng);
            shard.matrices[2] = random_matrix(d, dh, scale, rng);
            shard.matrices[3] = random_matrix(d, dh, scale, rng);
            shard.matrices[4] = random_matrix(df, d, scale, rng);
            shard.matrices[5] = random_matrix(d, df, scale, rng);
            model.layers[layer].push_back(std::move(shard));
        }
    }
    return model;
}

ModelManifest build_shard_tree(const RawModel& model, const std::vector<int>& bitwidths,
                               const std::filesystem::path& out_dir) {
    ModelManifest manifest = manifest_for(model.spec, bitwidths);
    manifest.base_dir = out_dir;
    std::filesystem::create_directories(out_dir);
    try {
        for (const auto& layer : model.layers) {
            const GaussianFit fit = [&] {
                std::vector<float> flat;
                flat.reserve(layer.size() * layer[0].weight_count());
                for (const auto& s : layer) {
                    auto f = s.flat();
                    flat.insert(flat.end(), f.begin(), f.end());
                }
                return fit_gaussian(flat);
            }();
            for (int k : bitwidths) {
                auto quantized = quantize_layer(layer, k, &fit);
                for (const auto& q : quantized) write_shard(q, out_dir);
            }
        }
        save_manifest(manifest, out_dir / "manifest.json");
    } catch (...) {
        // no partial trees; only touch entries this build owns
        std::error_code ec;
        for (int layer = 0; layer < model.spec.n_layers; ++layer) {
            char name[16];
            std::snprintf(name, sizeof name, "layer%02d", layer);
            std::filesystem::remove_all(out_dir / name, ec);
        }
        std::filesystem::remove(out_dir / "manifest.json", ec);
        throw;
    }
    return manifest;
}

namespace {
constexpr char kRawMagic[4] = {'S', 'T', 'I', 'W'};

void put_u32(std::ofstream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
    out.write(b, 4);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}
}  // namespace

void save_raw_model(const RawModel& model, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out.write(kRawMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(model.spec.n_layers));
    put_u32(out, static_cast<std::uint32_t>(model.spec.n_slices));
    put_u32(out, static_cast<std::uint32_t>(model.spec.hidden_dim));
    put_u32(out, static_cast<std::uint32_t>(model.spec.ffn_dim));
    for (const auto& layer : model.layers) {
        for (const auto& shard : layer) {
            for (const auto& m : shard.matrices)
                out.write(reinterpret_cast<const char*>(m.data.data()),
                          static_cast<std::streamsize>(m.data.size() * sizeof(float)));
        }
    }
    if (!out) throw IoError("short write to " + file.string());
}

RawModel load_raw_model(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kRawMagic, 4) != 0) throw IoError("bad raw model magic");

    RawModel model;
    model.spec.n_layers = static_cast<int>(get_u32(in));
    model.spec.n_slices = static_cast<int>(get_u32(in));
    model.spec.hidden_dim = static_cast<int>(get_u32(in));
    model.spec.ffn_dim = static_cast<int>(get_u32(in));
    if (model.spec.n_slices < 1 || model.spec.hidden_dim % model.spec.n_slices != 0 ||
        model.spec.ffn_dim % model.spec.n_slices != 0)
        throw IoError("bad raw model geometry");

    const auto d = static_cast<std::uint32_t>(model.spec.hidden_dim);
    const auto dh = static_cast<std::uint32_t>(model.spec.hidden_dim / model.spec.n_slices);
    const auto df = static_cast<std::uint32_t>(model.spec.ffn_dim / model.spec.n_slices);
    const std::array<std::pair<std::uint32_t, std::uint32_t>, kShardMatrixCount> dims = {
        {{d, dh}, {d, dh}, {d, dh}, {d, dh}, {df, d}, {d, df}}};

    model.layers.resize(model.spec.n_layers);
    for (int layer = 0; layer < model.spec.n_layers; ++layer) {
        for (int slice = 0; slice < model.spec.n_slices; ++slice) {
            RawShard shard;
            shard.id = {layer, slice};
            for (int i = 0; i < kShardMatrixCount; ++i) {
                Matrix& m = shard.matrices[i];
                m.rows = dims[i].first;
                m.cols = dims[i].second;
                m.data.resize(m.size());
                in.read(reinterpret_cast<char*>(m.data.data()),
                        static_cast<std::streamsize>(m.data.size() * sizeof(float)));
            }
            model.layers[layer].push_back(std::move(shard));
        }
    }
    if (!in) throw IoError("truncated raw model file");
    return model;
}

}  // namespace sti
