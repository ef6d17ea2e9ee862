#include "sti/planner.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace sti {

namespace {

void check_request(const PlanRequest& req) {
    if (req.target_latency <= 0) throw Error("target latency must be positive");
    if (req.n_max < 1 || req.m_max < 1) throw Error("plan request needs n_max/m_max from the manifest");
    if (req.bitwidths.empty()) throw Error("plan request needs the available bitwidths");
    std::uint64_t preload_bytes = 0;
    for (const auto& p : req.preload) preload_bytes += p.bytes;
    if (preload_bytes > req.preload_budget)
        throw Error("preload contents exceed the preload budget");
}

std::vector<int> compressed_widths(const PlanRequest& req) {
    std::vector<int> out;
    for (int k : req.bitwidths)
        if (k != kFullFidelityBits) out.push_back(k);
    return out;
}

}  // namespace

ComputePlan plan_compute(const PlanRequest& req) {
    check_request(req);
    std::optional<SubmodelShape> best;
    for (int n = req.n_min; n <= req.n_max; ++n) {
        for (int m = req.m_min; m <= req.m_max; ++m) {
            const Micros per_layer = req.profile.compute(req.input_len, m, req.freq);
            if (static_cast<Micros>(n) * per_layer > req.target_latency) continue;
            SubmodelShape cand{n, m};
            if (!best || shape_preferred(cand, *best)) best = cand;
        }
    }
    if (!best) return {{req.n_min, req.m_min}, true};
    return {*best, false};
}

AibLedger init_ledger(const SubmodelShape& shape, const PlanRequest& req) {
    const Micros per_layer = req.profile.compute(req.input_len, shape.width, req.freq);
    AibLedger ledger;
    ledger.budgets.assign(shape.depth, 0);
    for (int j = 0; j < shape.depth; ++j)
        ledger.budgets[j] = static_cast<Micros>(j) * per_layer;
    // a preloaded shard at layer p grants its IO time to p and every later layer
    for (const auto& p : req.preload) {
        if (!shape.contains(p.shard.id)) continue;
        const Micros bonus = req.profile.io(p.shard.bitwidth);
        for (int j = p.shard.id.layer; j < shape.depth; ++j) ledger.budgets[j] += bonus;
    }
    return ledger;
}

void debit(AibLedger& ledger, int layer, Micros cost) {
    if (layer < 0 || layer >= static_cast<int>(ledger.budgets.size()))
        throw Error("debit layer out of range");
    if (cost < 0) throw Error("negative debit");
    for (std::size_t j = layer; j < ledger.budgets.size(); ++j) ledger.budgets[j] -= cost;
}

bool is_valid(const AibLedger& ledger) { return ledger.valid(); }

ExecutionPlan plan_io(const SubmodelShape& shape, const PlanRequest& req, bool compute_degraded,
                      PlanDebug* debug) {
    check_request(req);
    const auto widths = compressed_widths(req);
    if (widths.empty()) throw Error("no compressed bitwidths available");
    {
        std::set<ShardId> ids;
        for (const auto& p : req.preload)
            if (!ids.insert(p.shard.id).second) throw Error("duplicate shard in preload contents");
    }

    ExecutionPlan out;
    out.shape = shape;
    out.assignment.assign(shape.positions(), 0);
    out.target_latency = req.target_latency;
    out.input_len = req.input_len;
    out.freq = req.freq;
    out.degraded = compute_degraded;
    out.profile_hash = req.profile_hash;
    out.importance_hash = req.importance_hash;
    out.manifest_hash = req.manifest_hash;

    AibLedger ledger = init_ledger(shape, req);

    // Step 1: satisfy in-shape positions from the preload buffer, debiting
    // each shard at its own layer. The debit cancels the init bonus exactly.
    std::map<ShardId, int> preloaded_at;
    for (const auto& p : req.preload) {
        if (!shape.contains(p.shard.id)) continue;  // stays in the buffer, grants nothing
        preloaded_at[p.shard.id] = p.shard.bitwidth;
        out.at(p.shard.id.layer, p.shard.id.slice) = p.shard.bitwidth;
        out.preloaded.push_back(p.shard);
        debit(ledger, p.shard.id.layer, req.profile.io(p.shard.bitwidth));
    }

    std::vector<ShardId> unallocated;
    for (int layer = 0; layer < shape.depth; ++layer)
        for (int slice = 0; slice < shape.width; ++slice)
            if (!preloaded_at.count({layer, slice})) unallocated.push_back({layer, slice});

    // Pass 1: the largest uniform width every unallocated position can carry.
    int uniform = 0;
    AibLedger after_uniform;
    for (auto it = widths.rbegin(); it != widths.rend(); ++it) {
        AibLedger trial = ledger;
        const Micros cost = req.profile.io(*it);
        for (const auto& id : unallocated) debit(trial, id.layer, cost);
        if (is_valid(trial)) {
            uniform = *it;
            after_uniform = std::move(trial);
            break;
        }
    }
    if (uniform == 0) {
        // Even the narrowest width stalls; load it anyway, best effort, and
        // stop allocating.
        uniform = widths.front();
        after_uniform = ledger;
        const Micros cost = req.profile.io(uniform);
        for (const auto& id : unallocated) debit(after_uniform, id.layer, cost);
        for (const auto& id : unallocated) out.at(id.layer, id.slice) = uniform;
        out.degraded = true;
        out.ledger = after_uniform;
        if (debug) debug->uniform_bitwidth = uniform;
        return out;
    }
    for (const auto& id : unallocated) out.at(id.layer, id.slice) = uniform;
    ledger = std::move(after_uniform);
    if (debug) debug->uniform_bitwidth = uniform;

    // Pass 2: upgrade positions in importance order (ties by ascending
    // (layer, slice), which std::sort's stability over the map order gives).
    std::vector<ShardId> order;
    for (int layer = 0; layer < shape.depth; ++layer)
        for (int slice = 0; slice < shape.width; ++slice) order.push_back({layer, slice});
    std::stable_sort(order.begin(), order.end(), [&](ShardId a, ShardId b) {
        return req.importance.at(a) > req.importance.at(b);
    });

    std::vector<int> targets;  // descending upgrade candidates
    for (auto it = req.bitwidths.rbegin(); it != req.bitwidths.rend(); ++it) targets.push_back(*it);

    for (const ShardId& id : order) {
        const int current = out.at(id.layer, id.slice);
        const bool was_preloaded = preloaded_at.count(id) > 0;
        for (int target : targets) {
            if (req.upgrade_to_full_only && target != kFullFidelityBits) break;
            if (target <= current) break;  // descending; nothing higher left
            if (!was_preloaded && target <= uniform) break;
            // A preloaded shard upgrade is a fresh disk load at full cost;
            // its init bonus stays granted, no rebate.
            const Micros cost = was_preloaded
                                    ? req.profile.io(target)
                                    : req.profile.io(target) - req.profile.io(current);
            AibLedger trial = ledger;
            debit(trial, id.layer, cost);
            const bool ok = is_valid(trial);
            if (debug) debug->attempts.push_back({id, current, target, ok});
            if (ok) {
                ledger = std::move(trial);
                out.at(id.layer, id.slice) = target;
                if (was_preloaded) {
                    preloaded_at.erase(id);
                    std::erase_if(out.preloaded, [&](const ShardVersion& v) { return v.id == id; });
                }
                break;
            }
        }
    }

    out.ledger = ledger;
    return out;
}

ExecutionPlan plan(const PlanRequest& req, PlanDebug* debug) {
    const ComputePlan cp = plan_compute(req);
    return plan_io(cp.shape, req, cp.degraded, debug);
}

AibLedger ledger_for_plan(const ExecutionPlan& p, const HardwareProfile& profile) {
    const Micros per_layer = profile.compute(p.input_len, p.shape.width, p.freq);
    AibLedger ledger;
    ledger.budgets.assign(p.shape.depth, 0);
    for (int j = 0; j < p.shape.depth; ++j) ledger.budgets[j] = static_cast<Micros>(j) * per_layer;
    for (const auto& v : p.preloaded) {
        const Micros bonus = profile.io(v.bitwidth);
        for (int j = v.id.layer; j < p.shape.depth; ++j) ledger.budgets[j] += bonus;
        debit(ledger, v.id.layer, bonus);  // filling S' from the buffer
    }
    for (int layer = 0; layer < p.shape.depth; ++layer) {
        for (int slice = 0; slice < p.shape.width; ++slice) {
            if (p.is_preloaded({layer, slice})) continue;
            debit(ledger, layer, profile.io(p.at(layer, slice)));
        }
    }
    return ledger;
}

}  // namespace sti
