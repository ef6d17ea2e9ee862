#pragma once

#include <string>
#include <vector>

#include "sti/planner.hpp"
#include "sti/types.hpp"

// Deterministic discrete-event model of the two-stage pipeline, the
// independent oracle for the planner's budget arithmetic and the engine for
// strategy comparisons.

namespace sti {

struct LayerTiming {
    int layer = 0;
    Micros io_start = 0;
    Micros io_end = 0;
    Micros decode_start = 0;   // compute stage pickup
    Micros compute_start = 0;  // post-decode
    Micros compute_end = 0;
    Micros stall = 0;  // decode_start - previous compute_end (0 baseline at layer 0)
};

struct PipelineTrace {
    std::string backend;
    std::vector<LayerTiming> layers;
    Micros makespan = 0;
    Micros total_stall = 0;
    Micros compute_busy = 0;
    std::uint64_t bytes_read = 0;
    std::uint64_t peak_decoded_bytes = 0;
    std::uint64_t peak_staging_bytes = 0;

    double idle_fraction() const {
        return makespan > 0 ? 1.0 - static_cast<double>(compute_busy) / makespan : 0.0;
    }
    bool stall_free() const { return total_stall == 0; }
};

std::string to_json_string(const PipelineTrace&);
PipelineTrace trace_from_json(const std::string& text);
void save_trace(const PipelineTrace&, const std::filesystem::path& file);

// io_end(j) = io_end(j-1) + sum of non-preloaded shard IO of layer j;
// compute picks up layer j at max(previous compute end, io_end(j)). Pure and
// total: identical inputs give identical trace bytes.
PipelineTrace simulate(const ExecutionPlan& plan, const HardwareProfile& profile);

enum class Strategy {
    LoadThenExecute,   // whole submodel IO at 32-bit, then compute
    StandardPipeline,  // layerwise pipeline at one uniform bitwidth
    PreloadModel,      // whole model resident, compute only
    Elastic,           // the two-stage planner
};

struct StrategySpec {
    Strategy kind = Strategy::Elastic;
    int uniform_bitwidth = 6;  // StandardPipeline / PreloadModel
    // Elastic planning inputs; ignored by the baselines.
    std::vector<PreloadedShard> preload;
    std::uint64_t preload_budget = 0;
    ImportanceMap importance;
};

struct StrategyResult {
    SubmodelShape shape;
    Micros makespan = 0;
    PipelineTrace trace;
    bool degraded = false;
};

// Each strategy picks its best feasible shape under its own rule (IO+compute
// for load-then-execute, pipeline makespan for the standard pipeline, compute
// only for preload-model), then simulates it.
StrategyResult simulate_strategy(const StrategySpec& spec, const PlanRequest& base, Micros target);

std::string strategy_name(const StrategySpec& spec);

// Table of submodel shapes per (strategy, T), markdown or CSV.
std::string report_shapes(const std::vector<StrategySpec>& strategies, const PlanRequest& base,
                          const std::vector<Micros>& targets, bool csv);

}  // namespace sti
