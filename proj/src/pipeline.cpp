#include "sti/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace sti {

using nlohmann::json;

std::uint64_t PreloadBufferState::used_bytes() const {
    std::uint64_t total = 0;
    for (const auto& [id, r] : resident) total += r.bytes;
    return total;
}

std::vector<PreloadedShard> PreloadBufferState::contents() const {
    std::vector<PreloadedShard> out;
    for (const auto& [id, r] : resident)
        out.push_back({{id, r.shard.bitwidth}, r.bytes});
    return out;
}

PreloadBufferState update_preload_buffer(const PreloadBufferState& buffer, const ExecutionPlan& plan,
                                         const std::vector<ResidentShard>& loaded,
                                         const PreloadUpdateOptions& opts) {
    // executed version wins over a stale resident unless configured otherwise
    std::map<ShardId, const ResidentShard*> candidates;
    for (const auto& r : loaded) candidates[r.shard.id] = &r;
    for (const auto& [id, r] : buffer.resident) {
        auto it = candidates.find(id);
        if (it == candidates.end())
            candidates[id] = &r;
        else if (opts.keep_higher_fidelity && r.shard.bitwidth > it->second->shard.bitwidth)
            it->second = &r;
    }

    PreloadBufferState out;
    out.budget_bytes = buffer.budget_bytes;
    std::uint64_t used = 0;
    for (const auto& [id, r] : candidates) {  // map iterates (layer, slice) ascending
        if (used + r->bytes > out.budget_bytes) break;
        used += r->bytes;
        out.resident[id] = *r;
    }
    return out;
}

PreloadBufferState resize_buffer(const PreloadBufferState& buffer, std::uint64_t new_budget) {
    PreloadBufferState out = buffer;
    out.budget_bytes = new_budget;
    std::uint64_t used = out.used_bytes();
    while (used > new_budget && !out.resident.empty()) {
        auto last = std::prev(out.resident.end());
        used -= last->second.bytes;
        out.resident.erase(last);
    }
    return out;
}

std::string to_json_string(const PreloadBufferState& b) {
    json resident = json::array();
    for (const auto& [id, r] : b.resident)
        resident.push_back(
            {{"layer", id.layer}, {"slice", id.slice}, {"k", r.shard.bitwidth}, {"bytes", r.bytes}});
    return json{{"budget_bytes", b.budget_bytes}, {"resident", resident}}.dump(2) + "\n";
}

PreloadBufferState buffer_from_json(const std::string& text, const ModelManifest& manifest) {
    const json j = json::parse(text);
    PreloadBufferState b;
    b.budget_bytes = j.at("budget_bytes").get<std::uint64_t>();
    for (auto& e : j.at("resident")) {
        const ShardId id{e.at("layer").get<int>(), e.at("slice").get<int>()};
        const int k = e.at("k").get<int>();
        ResidentShard r;
        r.shard = read_shard(shard_path(manifest, id, k));
        r.bytes = e.at("bytes").get<std::uint64_t>();
        b.resident[id] = std::move(r);
    }
    return b;
}

void save_buffer(const PreloadBufferState& b, const std::filesystem::path& file) {
    write_text_file(file, to_json_string(b));
}

PreloadBufferState load_buffer(const std::filesystem::path& file, const ModelManifest& manifest) {
    return buffer_from_json(read_text_file(file), manifest);
}

namespace {

struct LoadedLayer {
    int layer = 0;
    std::vector<QuantizedShard> shards;  // slice order, buffer hits merged in
    std::vector<ResidentShard> fetched;  // disk loads only
    std::uint64_t bytes_read = 0;
    std::uint64_t encoded_bytes = 0;
    Micros io_start = 0;
    Micros io_end = 0;
};

// Completed-layer queue between the IO worker and the compute stage. The IO
// worker never waits: budget arithmetic assumes loading runs ahead as far as
// the plan allows, so run-ahead parks here.
class LayerQueue {
public:
    void push(LoadedLayer&& layer) {
        {
            std::lock_guard lock(mu_);
            staged_bytes_ += layer.encoded_bytes;
            peak_staged_bytes_ = std::max(peak_staged_bytes_, staged_bytes_);
            queue_.push_back(std::move(layer));
        }
        cv_.notify_one();
    }

    void fail(std::exception_ptr err) {
        {
            std::lock_guard lock(mu_);
            error_ = std::move(err);
        }
        cv_.notify_one();
    }

    LoadedLayer pop() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !queue_.empty() || error_; });
        if (queue_.empty() && error_) std::rethrow_exception(error_);
        LoadedLayer layer = std::move(queue_.front());
        queue_.pop_front();
        staged_bytes_ -= layer.encoded_bytes;
        return layer;
    }

    std::uint64_t peak_staged_bytes() const { return peak_staged_bytes_; }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<LoadedLayer> queue_;
    std::exception_ptr error_;
    std::uint64_t staged_bytes_ = 0;
    std::uint64_t peak_staged_bytes_ = 0;
};

}  // namespace

ExecutionResult PipelineExecutor::execute(const ExecutionPlan& plan, const PreloadBufferState& buffer,
                                          ComputeBackend& backend, const Activations& input) {
    if (auto problems = validate_plan(plan); !problems.empty())
        throw Error("invalid plan: " + problems.front());
    if (input.dim != manifest_.hidden_dim) throw ShapeError("input dim != hidden_dim");

    const auto t_origin = std::chrono::steady_clock::now();
    auto now_us = [&t_origin] {
        return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() -
                                                                     t_origin)
            .count();
    };

    LayerQueue queue;
    std::vector<std::pair<Micros, Micros>> io_times(plan.shape.depth);

    // IO worker: strictly layer order, one layer per job, buffer hits skipped.
    std::thread io_worker([&] {
        try {
            for (int layer = 0; layer < plan.shape.depth; ++layer) {
                LoadedLayer out;
                out.layer = layer;
                out.io_start = now_us();
                LayerLoadRequest req;
                req.layer = layer;
                for (int slice = 0; slice < plan.shape.width; ++slice) {
                    const ShardId id{layer, slice};
                    if (plan.is_preloaded(id)) {
                        auto it = buffer.resident.find(id);
                        if (it == buffer.resident.end() ||
                            it->second.shard.bitwidth != plan.at(layer, slice))
                            throw MissingShardError("plan expects preloaded shard (" +
                                                    std::to_string(layer) + "," +
                                                    std::to_string(slice) + ") not in buffer");
                        continue;
                    }
                    req.slices.push_back({slice, plan.at(layer, slice)});
                }
                LayerLoadResult loaded = read_layer(manifest_, req);
                out.bytes_read = loaded.bytes_read;
                std::size_t next = 0;
                for (int slice = 0; slice < plan.shape.width; ++slice) {
                    const ShardId id{layer, slice};
                    if (plan.is_preloaded(id)) {
                        out.shards.push_back(buffer.resident.at(id).shard);
                    } else {
                        QuantizedShard q = std::move(loaded.shards.at(next++));
                        out.fetched.push_back({q, shard_file_size(q)});
                        out.shards.push_back(std::move(q));
                    }
                }
                for (const auto& q : out.shards) out.encoded_bytes += shard_file_size(q);
                out.io_end = now_us();
                queue.push(std::move(out));
            }
        } catch (...) {
            queue.fail(std::current_exception());
        }
    });

    ExecutionResult result;
    result.output = input;
    PipelineTrace& trace = result.trace;
    trace.backend = backend.name();

    // Working buffer: decoded weights for one layer plus activations, reused
    // across layers; sized once here, independent of depth.
    const bool decode_needed = backend.needs_decoded_weights();
    const std::uint64_t decoded_layer_bytes =
        decode_needed ? manifest_.shard_weight_count() * plan.shape.width * sizeof(float) : 0;
    const std::uint64_t activation_bytes =
        static_cast<std::uint64_t>(input.seq_len) * input.dim * sizeof(float);
    trace.peak_decoded_bytes = decoded_layer_bytes + activation_bytes + manifest_.layer_misc_bytes;

    Micros prev_compute_end = 0;
    try {
        DecodedLayer working;  // reused; realloc-free after the first layer
        for (int layer = 0; layer < plan.shape.depth; ++layer) {
            LoadedLayer loaded = queue.pop();
            LayerTiming t;
            t.layer = loaded.layer;
            t.decode_start = now_us();
            if (decode_needed) {
                working.shards.clear();
                for (const auto& q : loaded.shards) working.shards.push_back(decode_shard(q));
            }
            t.compute_start = now_us();
            backend.run_layer(working, result.output, plan.shape.width);
            t.compute_end = now_us();
            t.io_start = loaded.io_start;
            t.io_end = loaded.io_end;
            t.stall = std::max<Micros>(0, t.decode_start - prev_compute_end);
            prev_compute_end = t.compute_end;
            trace.total_stall += t.stall;
            trace.compute_busy += t.compute_end - t.decode_start;
            trace.bytes_read += loaded.bytes_read;
            trace.layers.push_back(t);
            for (auto& f : loaded.fetched) result.loaded.push_back(std::move(f));
        }
    } catch (const Error& e) {
        io_worker.join();
        trace.makespan = prev_compute_end;
        throw ExecutionAborted(e.what(), trace);
    } catch (...) {
        io_worker.join();
        throw;
    }
    io_worker.join();
    trace.makespan = prev_compute_end;
    trace.peak_staging_bytes = queue.peak_staged_bytes();

    // buffer hits count as loaded for the refill that follows an execution
    for (const auto& [id, r] : buffer.resident)
        if (plan.is_preloaded(id)) result.loaded.push_back(r);

    return result;
}

}  // namespace sti
