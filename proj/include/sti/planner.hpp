#pragma once

#include <optional>
#include <vector>

#include "sti/types.hpp"

// Two-stage planner. Compute planning picks the largest submodel the target
// latency can execute; IO planning fills it with shard versions tracked by
// per-layer Accumulated IO Budgets, with the preload buffer granted as bonus
// budget.

namespace sti {

struct PlanRequest {
    Micros target_latency = 0;  // T
    int input_len = 128;        // l
    std::string freq = "peak";
    std::vector<PreloadedShard> preload;  // buffer contents at plan time
    std::uint64_t preload_budget = 0;     // |S| bytes
    HardwareProfile profile;
    ImportanceMap importance;
    int m_min = 3;
    int n_min = 1;
    int n_max = 0;  // N, from the manifest; required
    int m_max = 0;  // M, from the manifest; required
    std::vector<int> bitwidths;  // available widths, ascending, from the manifest
    // Pass 2 normally tries every width above pass 1's from 32 downward;
    // this restricts it to full 32-bit upgrades only.
    bool upgrade_to_full_only = false;
    std::string profile_hash;
    std::string importance_hash;
    std::string manifest_hash;
};

struct ComputePlan {
    SubmodelShape shape;
    bool degraded = false;  // no feasible shape; fell back to (n_min, m_min)
};

// Largest feasible (n, m): n * T_comp(l, m, freq) <= T, maximizing n*m with
// ties to the deeper candidate.
ComputePlan plan_compute(const PlanRequest& req);

// budgets[j] = sum of prior layers' compute + bonus from in-shape preloaded
// shards at layers <= j. budgets[0] is pure bonus: layer-0 loads stall.
AibLedger init_ledger(const SubmodelShape& shape, const PlanRequest& req);

// Deducts cost from layer j and every later layer; earlier layers are
// already executed and unaffected.
void debit(AibLedger& ledger, int layer, Micros cost);

bool is_valid(const AibLedger& ledger);

// Pass-2 audit trail for the replay oracle.
struct UpgradeAttempt {
    ShardId id;
    int from_bitwidth = 0;
    int tried_bitwidth = 0;
    bool applied = false;
};

struct PlanDebug {
    int uniform_bitwidth = 0;  // pass-1 b
    std::vector<UpgradeAttempt> attempts;
};

ExecutionPlan plan_io(const SubmodelShape& shape, const PlanRequest& req, bool compute_degraded,
                      PlanDebug* debug = nullptr);

// plan_compute + init_ledger + plan_io.
ExecutionPlan plan(const PlanRequest& req, PlanDebug* debug = nullptr);

// Ledger a given assignment would leave behind: init + preload fill + one
// debit per non-preloaded position. This is what the stall oracle compares
// against the simulator.
AibLedger ledger_for_plan(const ExecutionPlan& p, const HardwareProfile& profile);

}  // namespace sti
