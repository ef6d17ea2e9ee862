#include "sti/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "sti/shard_store.hpp"

namespace sti {

SyntheticTaskEvaluator::SyntheticTaskEvaluator(const RawModel& model, const ModelManifest& manifest,
                                               Options opts)
    : manifest_(manifest), opts_(opts), raw_(model.layers) {
    // encode every (shard, k) once up front; decodes are cached on demand
    for (const auto& layer : raw_) {
        std::vector<float> flat;
        for (const auto& s : layer) {
            auto f = s.flat();
            flat.insert(flat.end(), f.begin(), f.end());
        }
        const GaussianFit fit = fit_gaussian(flat);
        for (int k : manifest_.bitwidths) {
            auto quantized = quantize_layer(layer, k, &fit);
            for (auto& q : quantized) encoded_[{q.id, k}] = std::move(q);
        }
    }

    for (int i = 0; i < opts_.eval_inputs; ++i)
        inputs_.push_back(random_activations(opts_.input_len, manifest_.hidden_dim,
                                             opts_.seed * 7919 + i));

    ReferenceBackend backend;
    double acc = 0.0, acc2 = 0.0;
    std::size_t n = 0;
    for (const auto& input : inputs_) {
        Activations act = input;
        for (const auto& layer : raw_) {
            DecodedLayer decoded;
            decoded.shards = layer;
            backend.run_layer(decoded, act, manifest_.n_slices);
        }
        for (float v : act.data) {
            acc += v;
            acc2 += static_cast<double>(v) * v;
            ++n;
        }
        teacher_out_.push_back(std::move(act));
    }
    const double mean = acc / static_cast<double>(n);
    teacher_variance_ = acc2 / static_cast<double>(n) - mean * mean;
    if (teacher_variance_ <= 0.0) teacher_variance_ = 1.0;
}

const RawShard& SyntheticTaskEvaluator::decoded(ShardId id, int bitwidth) {
    auto key = std::make_pair(id, bitwidth);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto enc = encoded_.find(key);
    if (enc == encoded_.end())
        throw Error("no encoded shard for bitwidth " + std::to_string(bitwidth));
    return cache_.emplace(key, decode_shard(enc->second)).first->second;
}

double SyntheticTaskEvaluator::evaluate(const BitwidthAssignment& assignment) {
    ++calls_;
    ReferenceBackend backend;
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < inputs_.size(); ++b) {
        Activations act = inputs_[b];
        for (int layer = 0; layer < manifest_.n_layers; ++layer) {
            DecodedLayer dec;
            for (int slice = 0; slice < manifest_.n_slices; ++slice) {
                auto it = assignment.find({layer, slice});
                if (it == assignment.end())
                    throw Error("assignment missing shard (" + std::to_string(layer) + "," +
                                std::to_string(slice) + ")");
                dec.shards.push_back(decoded({layer, slice}, it->second));
            }
            backend.run_layer(dec, act, manifest_.n_slices);
        }
        const auto& ref = teacher_out_[b];
        for (std::size_t i = 0; i < act.data.size(); ++i) {
            const double d = static_cast<double>(act.data[i]) - ref.data[i];
            se += d * d;
            ++n;
        }
    }
    const double nmse = se / static_cast<double>(n) / teacher_variance_;
    return 1.0 - nmse;
}

HardwareProfile profile_io(const ModelManifest& manifest, const IoProfileOptions& opts) {
    HardwareProfile profile;
    for (int k : manifest.bitwidths) {
        LayerLoadRequest req;
        req.layer = 0;
        req.slices = {{0, k}};
        IoMeasurement m = measure_layer_io(manifest, req,
                                           {.trials = opts.trials, .bypass_cache = opts.bypass_cache});
        profile.io_delay[k] = ms_to_us(m.mean_ms);
        profile.io_samples_ms[k] = m.samples_ms;
    }
    return profile;
}

void profile_compute(const ModelManifest& manifest, ComputeBackend& backend,
                     const ComputeProfileOptions& opts, HardwareProfile& out) {
    if (opts.widths.empty()) return;  // vacuous

    // encoded shards for the dry-run decode, reused across tuples
    std::vector<QuantizedShard> encoded;
    const int max_m = *std::max_element(opts.widths.begin(), opts.widths.end());
    if (max_m > manifest.n_slices) throw Error("width beyond manifest");
    for (int slice = 0; slice < max_m; ++slice)
        encoded.push_back(read_shard(shard_path(manifest, {0, slice}, opts.decomp_bitwidth)));

    out.freq_tags = opts.freq_tags;
    for (const auto& freq : opts.freq_tags) {
        for (int l : opts.input_lens) {
            for (int m : opts.widths) {
                double total_ms = 0.0;
                for (int t = 0; t < opts.trials; ++t) {
                    Activations act = random_activations(l, manifest.hidden_dim, 42);
                    const auto t0 = std::chrono::steady_clock::now();
                    DecodedLayer dec;
                    for (int slice = 0; slice < m; ++slice)
                        dec.shards.push_back(decode_shard(encoded[slice]));
                    backend.run_layer(dec, act, m);
                    const auto t1 = std::chrono::steady_clock::now();
                    total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
                }
                out.compute_delay[{l, m, freq}] = ms_to_us(total_ms / opts.trials);
            }
        }
    }
}

ImportanceMap profile_importance(const ModelManifest& manifest, Evaluator& evaluator,
                                 const ImportanceOptions& opts) {
    ImportanceMap map;
    map.metric_name = "metric";
    map.evaluator_id = evaluator.id();

    BitwidthAssignment low;
    for (int layer = 0; layer < manifest.n_layers; ++layer)
        for (int slice = 0; slice < manifest.n_slices; ++slice)
            low[{layer, slice}] = opts.low_bitwidth;

    map.baseline_metric = evaluator.evaluate(low);

    // ShardId order keeps the merge deterministic regardless of execution
    // order; ties downstream break by ascending (layer, slice).
    for (int layer = 0; layer < manifest.n_layers; ++layer) {
        for (int slice = 0; slice < manifest.n_slices; ++slice) {
            BitwidthAssignment probe = low;
            probe[{layer, slice}] = opts.high_bitwidth;
            try {
                map.score[{layer, slice}] = evaluator.evaluate(probe) - map.baseline_metric;
            } catch (...) {
                if (opts.checkpoint) opts.checkpoint(map);
                throw;
            }
            if (opts.checkpoint) opts.checkpoint(map);
        }
    }
    return map;
}

}  // namespace sti
