#pragma once

#include <map>
#include <memory>

#include "sti/backend.hpp"
#include "sti/shard_store.hpp"
#include "sti/simulator.hpp"
#include "sti/types.hpp"

// Executes an ExecutionPlan as a two-stage pipeline: an IO worker streams
// layers off disk in order while the compute worker decodes and computes the
// current layer out of a reused one-layer working buffer.

namespace sti {

struct ResidentShard {
    QuantizedShard shard;
    std::uint64_t bytes = 0;  // encoded file size, the |S| accounting unit
};

// Persistent preload buffer. Residency order is (layer, slice) ascending; at
// most one version per ShardId.
struct PreloadBufferState {
    std::uint64_t budget_bytes = 0;
    std::map<ShardId, ResidentShard> resident;

    std::uint64_t used_bytes() const;
    std::vector<PreloadedShard> contents() const;  // what the planner consumes
};

struct PreloadUpdateOptions {
    // Off by default: the executed version replaces a stale resident one even
    // when the resident is wider.
    bool keep_higher_fidelity = false;
};

// Refill after an execution: candidates are the executed shards plus previous
// residents, deduplicated per ShardId, filled in ascending (layer, slice)
// order until the next candidate would overflow the budget.
PreloadBufferState update_preload_buffer(const PreloadBufferState& buffer, const ExecutionPlan& plan,
                                         const std::vector<ResidentShard>& loaded,
                                         const PreloadUpdateOptions& opts = {});

// Shrink evicts from the highest (layer, slice) downward; growing only
// raises the budget, refill happens at the next execution.
PreloadBufferState resize_buffer(const PreloadBufferState& buffer, std::uint64_t new_budget);

std::string to_json_string(const PreloadBufferState&);
// Re-reads resident shard content from the store described by the manifest.
PreloadBufferState buffer_from_json(const std::string& text, const ModelManifest& manifest);
void save_buffer(const PreloadBufferState&, const std::filesystem::path& file);
PreloadBufferState load_buffer(const std::filesystem::path& file, const ModelManifest& manifest);

struct ExecutionResult {
    Activations output;
    PipelineTrace trace;
    std::vector<ResidentShard> loaded;  // everything the plan executed, encoded
};

// A missing shard or backend failure mid-run aborts with the partial trace.
class ExecutionAborted : public Error {
public:
    ExecutionAborted(const std::string& what, PipelineTrace partial)
        : Error(what), partial_trace(std::move(partial)) {}
    PipelineTrace partial_trace;
};

// One engine per expected model; one execute call at a time per instance.
class PipelineExecutor {
public:
    explicit PipelineExecutor(ModelManifest manifest) : manifest_(std::move(manifest)) {}

    // IO jobs go strictly in layer order, each fetching the layer's assigned
    // versions minus buffer hits; compute starts a layer only once its shards
    // are all present. Decode is attributed to the compute stage and reuses
    // the working buffer.
    ExecutionResult execute(const ExecutionPlan& plan, const PreloadBufferState& buffer,
                            ComputeBackend& backend, const Activations& input);

    const ModelManifest& manifest() const { return manifest_; }

private:
    ModelManifest manifest_;
};

}  // namespace sti
