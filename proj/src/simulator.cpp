#include "sti/simulator.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <sstream>

#include "json.hpp"

namespace sti {

using nlohmann::json;

std::string to_json_string(const PipelineTrace& t) {
    json layers = json::array();
    for (const auto& l : t.layers)
        layers.push_back({{"layer", l.layer},
                          {"io_start_us", l.io_start},
                          {"io_end_us", l.io_end},
                          {"decode_start_us", l.decode_start},
                          {"compute_start_us", l.compute_start},
                          {"compute_end_us", l.compute_end},
                          {"stall_us", l.stall}});
    json j{{"backend", t.backend},
           {"layers", layers},
           {"makespan_us", t.makespan},
           {"total_stall_us", t.total_stall},
           {"compute_busy_us", t.compute_busy},
           {"bytes_read", t.bytes_read},
           {"peak_decoded_bytes", t.peak_decoded_bytes},
           {"peak_staging_bytes", t.peak_staging_bytes}};
    return j.dump(2) + "\n";
}

PipelineTrace trace_from_json(const std::string& text) {
    const json j = json::parse(text);
    PipelineTrace t;
    t.backend = j.at("backend").get<std::string>();
    for (auto& l : j.at("layers")) {
        LayerTiming lt;
        lt.layer = l.at("layer").get<int>();
        lt.io_start = l.at("io_start_us").get<Micros>();
        lt.io_end = l.at("io_end_us").get<Micros>();
        lt.decode_start = l.at("decode_start_us").get<Micros>();
        lt.compute_start = l.at("compute_start_us").get<Micros>();
        lt.compute_end = l.at("compute_end_us").get<Micros>();
        lt.stall = l.at("stall_us").get<Micros>();
        t.layers.push_back(lt);
    }
    t.makespan = j.at("makespan_us").get<Micros>();
    t.total_stall = j.at("total_stall_us").get<Micros>();
    t.compute_busy = j.at("compute_busy_us").get<Micros>();
    t.bytes_read = j.at("bytes_read").get<std::uint64_t>();
    t.peak_decoded_bytes = j.at("peak_decoded_bytes").get<std::uint64_t>();
    t.peak_staging_bytes = j.at("peak_staging_bytes").get<std::uint64_t>();
    return t;
}

void save_trace(const PipelineTrace& t, const std::filesystem::path& file) {
    write_text_file(file, to_json_string(t));
}

PipelineTrace simulate(const ExecutionPlan& plan, const HardwareProfile& profile) {
    const Micros per_layer = profile.compute(plan.input_len, plan.shape.width, plan.freq);
    PipelineTrace trace;
    trace.backend = "simulated";
    Micros io_cursor = 0;
    Micros prev_compute_end = 0;
    for (int layer = 0; layer < plan.shape.depth; ++layer) {
        Micros layer_io = 0;
        for (int slice = 0; slice < plan.shape.width; ++slice)
            if (!plan.is_preloaded({layer, slice}))
                layer_io += profile.io(plan.at(layer, slice));

        LayerTiming t;
        t.layer = layer;
        t.io_start = io_cursor;
        t.io_end = io_cursor + layer_io;
        io_cursor = t.io_end;
        t.decode_start = std::max(prev_compute_end, t.io_end);
        t.compute_start = t.decode_start;  // decompression lives inside T_comp
        t.compute_end = t.compute_start + per_layer;
        t.stall = t.decode_start - prev_compute_end;
        prev_compute_end = t.compute_end;
        trace.total_stall += t.stall;
        trace.compute_busy += per_layer;
        trace.layers.push_back(t);
    }
    trace.makespan = prev_compute_end;
    return trace;
}

namespace {

// Best shape under a feasibility rule, by the shared total order.
std::optional<SubmodelShape> best_shape(const PlanRequest& req,
                                        const std::function<Micros(SubmodelShape)>& cost,
                                        Micros target) {
    std::optional<SubmodelShape> best;
    for (int n = req.n_min; n <= req.n_max; ++n) {
        for (int m = req.m_min; m <= req.m_max; ++m) {
            SubmodelShape cand{n, m};
            if (cost(cand) > target) continue;
            if (!best || shape_preferred(cand, *best)) best = cand;
        }
    }
    return best;
}

ExecutionPlan uniform_plan(const SubmodelShape& shape, const PlanRequest& req, int bitwidth,
                           Micros target) {
    ExecutionPlan plan;
    plan.shape = shape;
    plan.assignment.assign(shape.positions(), bitwidth);
    plan.target_latency = target;
    plan.input_len = req.input_len;
    plan.freq = req.freq;
    return plan;
}

}  // namespace

StrategyResult simulate_strategy(const StrategySpec& spec, const PlanRequest& base, Micros target) {
    PlanRequest req = base;
    req.target_latency = target;

    StrategyResult result;
    switch (spec.kind) {
        case Strategy::LoadThenExecute: {
            auto cost = [&](SubmodelShape s) {
                const Micros io = static_cast<Micros>(s.positions()) * req.profile.io(kFullFidelityBits);
                return io + static_cast<Micros>(s.depth) *
                                req.profile.compute(req.input_len, s.width, req.freq);
            };
            auto shape = best_shape(req, cost, target);
            result.degraded = !shape.has_value();
            result.shape = shape.value_or(SubmodelShape{req.n_min, req.m_min});
            // whole-model IO strictly precedes compute
            const Micros per_shard = req.profile.io(kFullFidelityBits);
            const Micros per_layer_io = static_cast<Micros>(result.shape.width) * per_shard;
            const Micros per_layer_comp =
                req.profile.compute(req.input_len, result.shape.width, req.freq);
            const Micros total_io = static_cast<Micros>(result.shape.depth) * per_layer_io;
            PipelineTrace& t = result.trace;
            t.backend = "simulated";
            Micros compute_cursor = total_io;
            for (int layer = 0; layer < result.shape.depth; ++layer) {
                LayerTiming lt;
                lt.layer = layer;
                lt.io_start = static_cast<Micros>(layer) * per_layer_io;
                lt.io_end = lt.io_start + per_layer_io;
                lt.decode_start = compute_cursor;
                lt.compute_start = compute_cursor;
                lt.compute_end = compute_cursor + per_layer_comp;
                lt.stall = layer == 0 ? total_io : 0;
                compute_cursor = lt.compute_end;
                t.total_stall += lt.stall;
                t.compute_busy += per_layer_comp;
                t.layers.push_back(lt);
            }
            t.makespan = compute_cursor;
            result.makespan = t.makespan;
            break;
        }
        case Strategy::StandardPipeline: {
            auto cost = [&](SubmodelShape s) {
                ExecutionPlan plan = uniform_plan(s, req, spec.uniform_bitwidth, target);
                return simulate(plan, req.profile).makespan;
            };
            auto shape = best_shape(req, cost, target);
            result.degraded = !shape.has_value();
            result.shape = shape.value_or(SubmodelShape{req.n_min, req.m_min});
            ExecutionPlan plan = uniform_plan(result.shape, req, spec.uniform_bitwidth, target);
            result.trace = simulate(plan, req.profile);
            result.makespan = result.trace.makespan;
            break;
        }
        case Strategy::PreloadModel: {
            auto cost = [&](SubmodelShape s) {
                return static_cast<Micros>(s.depth) *
                       req.profile.compute(req.input_len, s.width, req.freq);
            };
            auto shape = best_shape(req, cost, target);
            result.degraded = !shape.has_value();
            result.shape = shape.value_or(SubmodelShape{req.n_min, req.m_min});
            ExecutionPlan plan = uniform_plan(result.shape, req, spec.uniform_bitwidth, target);
            // everything resident: mark every position preloaded
            for (int layer = 0; layer < result.shape.depth; ++layer)
                for (int slice = 0; slice < result.shape.width; ++slice)
                    plan.preloaded.push_back({{layer, slice}, spec.uniform_bitwidth});
            result.trace = simulate(plan, req.profile);
            result.makespan = result.trace.makespan;
            break;
        }
        case Strategy::Elastic: {
            req.preload = spec.preload;
            req.preload_budget = spec.preload_budget;
            req.importance = spec.importance;
            ExecutionPlan p = plan(req);
            result.shape = p.shape;
            result.degraded = p.degraded;
            result.trace = simulate(p, req.profile);
            result.makespan = result.trace.makespan;
            break;
        }
    }
    return result;
}

std::string strategy_name(const StrategySpec& spec) {
    switch (spec.kind) {
        case Strategy::LoadThenExecute: return "load-exec";
        case Strategy::StandardPipeline:
            return "stdpl-" + std::to_string(spec.uniform_bitwidth) + "bit";
        case Strategy::PreloadModel:
            return "preload-" + std::to_string(spec.uniform_bitwidth) + "bit";
        case Strategy::Elastic: return "elastic";
    }
    return "?";
}

std::string report_shapes(const std::vector<StrategySpec>& strategies, const PlanRequest& base,
                          const std::vector<Micros>& targets, bool csv) {
    std::ostringstream os;
    const char* sep = csv ? "," : " | ";
    if (!csv) os << "| ";
    os << "strategy";
    for (Micros t : targets) os << sep << "T=" << us_to_ms(t) << "ms";
    if (!csv) os << " |";
    os << "\n";
    if (!csv) {
        os << "|---";
        for (std::size_t i = 0; i < targets.size(); ++i) os << "|---";
        os << "|\n";
    }
    for (const auto& s : strategies) {
        if (!csv) os << "| ";
        os << strategy_name(s);
        for (Micros t : targets) {
            StrategyResult r = simulate_strategy(s, base, t);
            os << sep << r.shape.depth << "x" << r.shape.width;
            if (r.degraded) os << "*";
        }
        if (!csv) os << " |";
        os << "\n";
    }
    if (!csv) os << "\n* degraded: no feasible shape, minimum emitted\n";
    return os.str();
}

}  // namespace sti
